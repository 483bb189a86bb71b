use super::checkpoint::TrainState;
use super::experiment::Experiment;
use super::metrics::MetricsRow;
use super::trainer::{stage_plan, train_stage, Stage, StageSpec};
use super::{Mode, PfnLevel, RunConfig};
use crate::cssl::pfn_compute;
use crate::error::{Error, Result};

/// Runs every stage of `cfg.mode`, resuming from `state` if given. The
/// callback sees each finished stage.
///
/// Stages share one learning-rate phase, except that a stage entered with
/// `reset` (the DINO fine-tune) starts a new phase with a fresh head and
/// cleared optimizer moments.
pub fn run_pipeline<F>(
    cfg: &RunConfig,
    exp: &mut Experiment,
    state: Option<TrainState>,
    mut on_stage_end: F,
) -> Result<(TrainState, Vec<MetricsRow>)>
where
    F: FnMut(&StageSpec, &TrainState, &[MetricsRow]) -> Result<()>,
{
    if cfg.mode == Mode::PfnSweep {
        return Err(Error::InvalidConfig("pfn_sweep runs through pfn_sweep()".into()));
    }
    let mut state = match state {
        Some(s) => {
            if s.mode != cfg.mode {
                return Err(Error::ConfigMismatch(format!(
                    "checkpoint was trained as {}, config asks for {}",
                    s.mode, cfg.mode
                )));
            }
            s
        }
        None => TrainState::fresh(cfg)?,
    };
    let plan = stage_plan(cfg);
    let spe = cfg.steps_per_epoch() as u64;
    // Phase groups: consecutive stages up to the next reset.
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut start = 0u64;
    for (spec, reset) in &plan {
        if *reset || groups.is_empty() {
            groups.push((start, 0));
        }
        groups.last_mut().unwrap().1 += spec.epochs as u64;
        start += spec.epochs as u64;
    }
    let mut rows = Vec::new();
    let mut begin = 0u64;
    let mut group = 0usize;
    for (i, (spec, reset)) in plan.iter().enumerate() {
        if *reset && i > 0 {
            group += 1;
        }
        let end = begin + spec.epochs as u64;
        if state.epoch >= end {
            begin = end;
            continue;
        }
        let done = state.epoch.saturating_sub(begin);
        let (g_start, g_len) = groups[group];
        if state.epoch == g_start {
            state.start_phase(g_len * spe, *reset);
            if *reset {
                state.reset_dino(cfg)?;
            }
        }
        let remaining = StageSpec {
            epochs: spec.epochs - done as usize,
            ..*spec
        };
        log::info!(
            "stage {} for {} epochs from epoch {}",
            remaining.stage.name(),
            remaining.epochs,
            state.epoch
        );
        let (next, stage_rows) = train_stage(cfg, exp, remaining, state)?;
        state = next;
        on_stage_end(&remaining, &state, &stage_rows)?;
        rows.extend(stage_rows);
        begin = end;
    }
    Ok((state, rows))
}

/// Result of one p_fn sweep level.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub level: PfnLevel,
    /// Mean natural p_fn of the training batches.
    pub natural_pfn: f64,
    /// Mean p_fn among retained components.
    pub retained_pfn: f64,
    pub eer: f64,
    pub min_dcf: f64,
}

/// Mean natural p_fn over the batches of the first epoch.
pub fn mean_natural_pfn(cfg: &RunConfig, exp: &Experiment) -> f64 {
    let spe = cfg.steps_per_epoch();
    let labels = exp.train_labels();
    let batches = super::trainer::epoch_batches(cfg.seed, 0, labels.len(), cfg.train.batch_size, spe);
    let total: f64 = batches
        .iter()
        .map(|b| pfn_compute(&b.iter().map(|&u| labels[u]).collect::<Vec<_>>()))
        .sum();
    total / batches.len() as f64
}

/// Trains one in-batch contrastive model per level from the same
/// initialization and evaluates each.
pub fn pfn_sweep(cfg: &RunConfig, exp: &mut Experiment, levels: &[PfnLevel]) -> Result<Vec<SweepRow>> {
    let natural = mean_natural_pfn(cfg, exp);
    for level in levels {
        if let PfnLevel::Absolute(x) = *level {
            if x > natural + 1e-12 {
                return Err(Error::TargetAboveNatural { target: x, natural });
            }
        }
    }
    let mut out = Vec::with_capacity(levels.len());
    for &level in levels {
        let spec = StageSpec::new(Stage::InBatch(level), cfg.train.stages.moco);
        let (state, rows) = train_stage(cfg, exp, spec, TrainState::fresh(cfg)?)?;
        let (eer, min_dcf) = exp.evaluate(&state.pair.teacher)?;
        let mean = |f: fn(&MetricsRow) -> Option<f64>| {
            let v: Vec<f64> = rows.iter().filter_map(f).collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        };
        log::info!("pfn level {level}: eer {eer:.4}");
        out.push(SweepRow {
            level,
            natural_pfn: mean(|r| r.pfn),
            retained_pfn: mean(|r| r.retained_pfn),
            eer,
            min_dcf,
        });
    }
    Ok(out)
}
