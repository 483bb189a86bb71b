//! Training loops, schedules, checkpoints and experiment orchestration.

mod checkpoint;
mod config;
mod experiment;
mod metrics;
mod optim;
mod pipeline;
mod trainer;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_digest, hex, parse_checkpoint, read_checkpoint, write_checkpoint, DinoState,
    TrainState, CHECKPOINT_VERSION,
};
pub use config::{DinoConfig, EvalConfig, Mode, OptimConfig, PfnLevel, RunConfig, StageSchedule, TrainConfig};
pub use experiment::{embed_all, Experiment};
pub use metrics::{append_metrics, MetricsRow, METRICS_HEADER};
pub use optim::{lr_at, Adam, LrSchedule};
pub use pipeline::{mean_natural_pfn, pfn_sweep, run_pipeline, SweepRow};
pub use trainer::{fit_bank, stage_plan, train_stage, Stage, StageSpec};
