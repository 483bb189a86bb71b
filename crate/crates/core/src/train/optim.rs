use crate::error::{Error, Result};

/// Cosine decay from `start` at step 0 to `end` at step `total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub start: f64,
    pub end: f64,
    pub total: u64,
}

impl LrSchedule {
    /// Schedule whose last step index is `steps - 1`.
    pub fn over_steps(start: f64, end: f64, steps: u64) -> Self {
        Self {
            start,
            end,
            total: steps.saturating_sub(1),
        }
    }
}

/// `end + (start - end) (1 + cos(pi step / total)) / 2`.
pub fn lr_at(schedule: &LrSchedule, step: u64) -> Result<f64> {
    if step > schedule.total {
        return Err(Error::StepOutOfRange {
            step,
            total: schedule.total,
        });
    }
    if schedule.total == 0 {
        return Ok(schedule.start);
    }
    if step == schedule.total {
        return Ok(schedule.end);
    }
    let phase = std::f64::consts::PI * step as f64 / schedule.total as f64;
    Ok(schedule.end + 0.5 * (schedule.start - schedule.end) * (1.0 + phase.cos()))
}

/// Adam moments for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1,
            beta2,
            eps,
            weight_decay: 0.0,
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch("optimizer state and parameters".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i] + self.weight_decay * params[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}
