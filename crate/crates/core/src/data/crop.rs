use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FrameMatrix;
use crate::error::{Error, Result};
use crate::rng;

/// Lengths for global and local crops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CropConfig {
    pub global_min: usize,
    pub global_max: usize,
    /// Local crop length as a fraction of its global view.
    pub local_fraction: f64,
    pub locals: usize,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            global_min: 60,
            global_max: 80,
            local_fraction: 0.5,
            locals: 4,
        }
    }
}

impl CropConfig {
    pub fn validate(&self) -> Result<()> {
        if self.global_min == 0 || self.global_max < self.global_min {
            return Err(Error::InvalidConfig("global crop range".into()));
        }
        if !(self.local_fraction > 0.0 && self.local_fraction <= 1.0) {
            return Err(Error::InvalidConfig("local_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn mean_global(&self) -> f64 {
        (self.global_min + self.global_max) as f64 / 2.0
    }
}

/// Contiguous crop whose length is drawn from the configured range and
/// capped at the input length.
pub fn crop_global(frames: &FrameMatrix, cfg: &CropConfig, rng: &mut rng::Rng) -> Result<FrameMatrix> {
    let t = frames.rows();
    if t < cfg.global_min {
        return Err(Error::TooShort {
            needed: cfg.global_min,
            available: t,
        });
    }
    let len = rng.random_range(cfg.global_min..=cfg.global_max).min(t);
    let start = rng.random_range(0..=t - len);
    Ok(frames.slice_rows(start, len))
}

/// Contiguous crop of `floor(local_fraction * len)` frames of a global view.
pub fn crop_local(global: &FrameMatrix, cfg: &CropConfig, rng: &mut rng::Rng) -> Result<FrameMatrix> {
    let t = global.rows();
    let len = (cfg.local_fraction * t as f64).floor() as usize;
    if len == 0 {
        return Err(Error::TooShort {
            needed: (1.0 / cfg.local_fraction).ceil() as usize,
            available: t,
        });
    }
    let start = rng.random_range(0..=t - len);
    Ok(global.slice_rows(start, len))
}
