use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::BackendConfig;
use crate::cssl::{KMeansConfig, ReweightConfig};
use crate::data::{AugmentationPolicy, CropConfig, SynthConfig};
use crate::dino::TempPair;
use crate::encoder::ArchConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simclr,
    Moco,
    C3Moco,
    Dino,
    C3Dino1,
    C3Dino2,
    SupconOracle,
    PfnSweep,
}

impl Mode {
    pub const ALL: [Mode; 8] = [
        Mode::Simclr,
        Mode::Moco,
        Mode::C3Moco,
        Mode::Dino,
        Mode::C3Dino1,
        Mode::C3Dino2,
        Mode::SupconOracle,
        Mode::PfnSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Simclr => "simclr",
            Mode::Moco => "moco",
            Mode::C3Moco => "c3_moco",
            Mode::Dino => "dino",
            Mode::C3Dino1 => "c3_dino1",
            Mode::C3Dino2 => "c3_dino2",
            Mode::SupconOracle => "supcon_oracle",
            Mode::PfnSweep => "pfn_sweep",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode `{s}`")))
    }
}

/// Epochs per training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageSchedule {
    /// Plain InfoNCE (also the epoch count of simclr, supcon_oracle and
    /// each p_fn sweep level).
    pub moco: usize,
    /// Re-weighted InfoNCE.
    pub reweight: usize,
    /// Re-weighted InfoNCE plus ProtoNCE.
    pub proto: usize,
    /// DINO fine-tuning after the contrastive stages.
    pub dino: usize,
    /// Epochs of the standalone DINO baseline; `0` uses the total of the
    /// four counts above.
    pub dino_scratch: usize,
    /// Frames consumed per epoch; steps per epoch are this divided by
    /// `batch_size * mean global crop length`.
    pub frames_per_epoch: usize,
}

impl Default for StageSchedule {
    fn default() -> Self {
        Self {
            moco: 8,
            reweight: 2,
            proto: 3,
            dino: 3,
            dino_scratch: 0,
            frames_per_epoch: 2_000_000,
        }
    }
}

impl StageSchedule {
    pub fn contrastive_epochs(&self) -> usize {
        self.moco + self.reweight + self.proto
    }

    pub fn dino_baseline_epochs(&self) -> usize {
        if self.dino_scratch > 0 {
            self.dino_scratch
        } else {
            self.contrastive_epochs() + self.dino
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DinoConfig {
    /// Number of softmax positions.
    pub head_k: usize,
    pub temps: TempPair,
    pub center_momentum: f64,
    /// When false the center stays at zero.
    pub centering: bool,
}

impl Default for DinoConfig {
    fn default() -> Self {
        Self {
            head_k: 512,
            temps: TempPair::default(),
            center_momentum: 0.99,
            centering: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_start: 1e-3,
            lr_end: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Held-out evaluation set and probe trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Speakers held out of training for evaluation.
    pub holdout_speakers: usize,
    pub n_target: usize,
    pub n_nontarget: usize,
    /// Augment evaluation utterances once with a fixed seed.
    pub augment: bool,
    /// Score the probe every epoch.
    pub probe_every_epoch: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            holdout_speakers: 16,
            n_target: 3000,
            n_nontarget: 3000,
            augment: true,
            probe_every_epoch: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub queue_size: usize,
    /// InfoNCE temperature.
    pub tau: f64,
    /// EMA coefficient of the teacher encoder and head.
    pub momentum: f64,
    /// ProtoNCE weight.
    pub alpha: f64,
    /// DINO weight in the multi-task variant.
    pub beta: f64,
    /// Negative prototypes per anchor; `0` means `min(M - 1, 64)`.
    pub proto_negatives: usize,
    /// Draw fresh augmented views every epoch instead of once.
    pub regenerate_views: bool,
    /// p_fn levels of the sweep: `natural`, `natural/<k>` or a number.
    pub pfn_levels: Vec<String>,
    pub stages: StageSchedule,
    pub optim: OptimConfig,
    pub reweight: ReweightConfig,
    pub kmeans: KMeansConfig,
    pub dino: DinoConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            queue_size: 1024,
            tau: 0.07,
            momentum: 0.996,
            alpha: 0.2,
            beta: 0.5,
            proto_negatives: 0,
            regenerate_views: false,
            pfn_levels: vec!["natural".into(), "natural/2".into(), "0".into()],
            stages: StageSchedule::default(),
            optim: OptimConfig::default(),
            reweight: ReweightConfig::default(),
            kmeans: KMeansConfig::default(),
            dino: DinoConfig::default(),
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub data: SynthConfig,
    pub augment: AugmentationPolicy,
    pub crop: CropConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub backend: BackendConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::C3Dino2,
            seed: 0,
            data: SynthConfig::default(),
            augment: AugmentationPolicy::default(),
            crop: CropConfig::default(),
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            backend: BackendConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.augment.validate()?;
        self.crop.validate()?;
        self.arch.validate()?;
        let t = &self.train;
        t.reweight.validate()?;
        t.kmeans.validate()?;
        t.dino.temps.validate()?;
        if self.arch.input_dim != self.data.feat_dim {
            return Err(Error::InvalidConfig(format!(
                "encoder input_dim {} differs from data feat_dim {}",
                self.arch.input_dim, self.data.feat_dim
            )));
        }
        if t.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be at least 2".into()));
        }
        if t.queue_size == 0 {
            return Err(Error::InvalidConfig("queue_size must be positive".into()));
        }
        if !(t.tau > 0.0) {
            return Err(Error::NonPositiveTemperature(t.tau));
        }
        if !(0.0..=1.0).contains(&t.momentum) || !(0.0..=1.0).contains(&t.dino.center_momentum) {
            return Err(Error::InvalidConfig("momenta must lie in [0, 1]".into()));
        }
        if !(t.alpha >= 0.0 && t.beta >= 0.0) {
            return Err(Error::InvalidConfig("alpha and beta must be non-negative".into()));
        }
        if t.dino.head_k < 2 {
            return Err(Error::InvalidConfig("head_k must be at least 2".into()));
        }
        let o = &t.optim;
        if !(o.lr_start > 0.0 && o.lr_end > 0.0 && o.lr_end <= o.lr_start) {
            return Err(Error::InvalidConfig("need 0 < lr_end <= lr_start".into()));
        }
        if self.crop.global_min > self.data.t_min {
            return Err(Error::InvalidConfig(format!(
                "global crops of {} frames exceed the shortest utterance ({})",
                self.crop.global_min, self.data.t_min
            )));
        }
        let s = &t.stages;
        let active = match self.mode {
            Mode::Simclr | Mode::Moco | Mode::SupconOracle | Mode::PfnSweep => s.moco,
            Mode::C3Moco | Mode::C3Dino1 => s.contrastive_epochs(),
            Mode::C3Dino2 => s.contrastive_epochs() + s.dino,
            Mode::Dino => s.dino_baseline_epochs(),
        };
        if active == 0 {
            return Err(Error::InvalidConfig(format!("mode {} has no active stage", self.mode)));
        }
        if s.frames_per_epoch == 0 {
            return Err(Error::InvalidConfig("frames_per_epoch must be positive".into()));
        }
        if self.eval.holdout_speakers == 0 || self.eval.holdout_speakers >= self.data.speakers {
            return Err(Error::InvalidConfig(
                "holdout_speakers must leave training speakers".into(),
            ));
        }
        if self.mode == Mode::PfnSweep {
            for l in &t.pfn_levels {
                l.parse::<PfnLevel>()?;
            }
        }
        Ok(())
    }

    /// Optimizer steps per epoch.
    pub fn steps_per_epoch(&self) -> usize {
        let per_step = self.train.batch_size as f64 * self.crop.mean_global();
        ((self.train.stages.frames_per_epoch as f64 / per_step).round() as usize).max(1)
    }
}

/// Requested false-negative level for the controlled p_fn experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PfnLevel {
    /// Keep every component.
    Natural,
    /// A fraction of each batch's natural p_fn.
    Fraction(f64),
    /// Fixed target, capped at each batch's natural p_fn.
    Absolute(f64),
}

impl PfnLevel {
    /// Target for a batch whose natural p_fn is `natural`.
    pub fn target(self, natural: f64) -> f64 {
        match self {
            PfnLevel::Natural => natural,
            PfnLevel::Fraction(f) => natural * f,
            PfnLevel::Absolute(x) => x.min(natural),
        }
    }
}

impl FromStr for PfnLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidConfig(format!("bad p_fn level `{s}`"));
        if s == "natural" {
            return Ok(PfnLevel::Natural);
        }
        if let Some(d) = s.strip_prefix("natural/") {
            let d: f64 = d.parse().map_err(|_| bad())?;
            if !(d >= 1.0) {
                return Err(bad());
            }
            return Ok(PfnLevel::Fraction(1.0 / d));
        }
        let x: f64 = s.parse().map_err(|_| bad())?;
        if !(0.0..=1.0).contains(&x) {
            return Err(bad());
        }
        Ok(PfnLevel::Absolute(x))
    }
}

impl fmt::Display for PfnLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PfnLevel::Natural => f.write_str("natural"),
            PfnLevel::Fraction(x) => write!(f, "natural/{}", 1.0 / x),
            PfnLevel::Absolute(x) => write!(f, "{x}"),
        }
    }
}
