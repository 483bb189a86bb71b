//! Self-distillation objective: projection head to `K` logits, teacher
//! centering and sharpening, and multi-crop cross-entropy.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;
use crate::tensor::{entropy, log_softmax, softmax_temp};

/// Affine map from embeddings to `K` logits, `W` stored `D x K` then `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DinoHead<S> {
    pub dim: usize,
    pub k: usize,
    pub values: Vec<S>,
}

impl<S: Scalar> DinoHead<S> {
    /// Weights `N(0, 1/D)`, zero bias.
    pub fn new(dim: usize, k: usize, seed: u64) -> Result<Self> {
        if dim == 0 || k < 2 {
            return Err(Error::InvalidConfig("head needs D >= 1 and K >= 2".into()));
        }
        let mut r = rng::stream(seed, Stream::HeadInit, 0);
        let std = 1.0 / (dim as f64).sqrt();
        let mut values = vec![S::zero(); dim * k + k];
        for v in &mut values[..dim * k] {
            let z: f64 = StandardNormal.sample(&mut r);
            *v = S::lit(std * z);
        }
        Ok(Self { dim, k, values })
    }

    pub fn logits(&self, e: &[S]) -> Vec<S> {
        let mut out = self.values[self.dim * self.k..].to_vec();
        for (d, &x) in e.iter().enumerate() {
            let row = &self.values[d * self.k..(d + 1) * self.k];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input embedding.
    pub fn backward(&self, e: &[S], upstream: &[S], grads: &mut [S]) -> Vec<S> {
        let k = self.k;
        let mut ge = vec![S::zero(); self.dim];
        for d in 0..self.dim {
            let row = &self.values[d * k..(d + 1) * k];
            let grow = &mut grads[d * k..(d + 1) * k];
            let mut acc = S::zero();
            for ((g, &w), &u) in grow.iter_mut().zip(row).zip(upstream) {
                *g += e[d] * u;
                acc += w * u;
            }
            ge[d] = acc;
        }
        for (g, &u) in grads[self.dim * k..].iter_mut().zip(upstream) {
            *g += u;
        }
        ge
    }

    pub fn ema_from(&mut self, source: &Self, m: S) -> Result<()> {
        if self.dim != source.dim || self.k != source.k {
            return Err(Error::ShapeMismatch("head shapes differ".into()));
        }
        for (d, &s) in self.values.iter_mut().zip(&source.values) {
            *d = m * *d + (S::one() - m) * s;
        }
        Ok(())
    }
}

/// Running center of teacher logits.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterState<S> {
    pub center: Vec<S>,
    pub momentum: S,
}

impl<S: Scalar> CenterState<S> {
    pub fn new(k: usize, momentum: S) -> Self {
        Self {
            center: vec![S::zero(); k],
            momentum,
        }
    }

    /// `C <- m C + (1 - m) mean(batch)`.
    pub fn update(&mut self, batch: &[Vec<S>]) -> Result<()> {
        *self = update_center(self, batch, self.momentum)?;
        Ok(())
    }

    /// Standard deviation of the center entries.
    pub fn spread(&self) -> S {
        let n = S::from_usize(self.center.len()).unwrap();
        let mean = self.center.iter().copied().sum::<S>() / n;
        (self.center.iter().map(|&c| (c - mean) * (c - mean)).sum::<S>() / n).sqrt()
    }
}

pub fn update_center<S: Scalar>(center: &CenterState<S>, batch: &[Vec<S>], m: S) -> Result<CenterState<S>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let k = center.center.len();
    if batch.iter().any(|x| x.len() != k) {
        return Err(Error::ShapeMismatch("logit width differs from center".into()));
    }
    let inv_b = S::one() / S::from_usize(batch.len()).unwrap();
    let c = (0..k)
        .map(|j| {
            let mean = batch.iter().map(|x| x[j]).sum::<S>() * inv_b;
            m * center.center[j] + (S::one() - m) * mean
        })
        .collect();
    Ok(CenterState {
        center: c,
        momentum: center.momentum,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TempPair {
    pub teacher: f64,
    pub student: f64,
}

impl Default for TempPair {
    fn default() -> Self {
        Self {
            teacher: 0.04,
            student: 0.1,
        }
    }
}

impl TempPair {
    pub fn new(teacher: f64, student: f64) -> Result<Self> {
        let t = Self { teacher, student };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.teacher > 0.0) {
            return Err(Error::NonPositiveTemperature(self.teacher));
        }
        if !(self.student > 0.0) {
            return Err(Error::NonPositiveTemperature(self.student));
        }
        if self.teacher >= self.student {
            return Err(Error::InvalidConfig(format!(
                "teacher temperature {} must be below student temperature {}",
                self.teacher, self.student
            )));
        }
        Ok(())
    }
}

/// Teacher target `softmax((x - c) / tau_t)`.
pub fn teacher_probs<S: Scalar>(x: &[S], center: &[S], tau_t: f64) -> Result<Vec<S>> {
    if x.len() != center.len() {
        return Err(Error::ShapeMismatch("teacher logits and center".into()));
    }
    let shifted: Vec<S> = x.iter().zip(center).map(|(&a, &c)| a - c).collect();
    softmax_temp(&shifted, S::lit(tau_t))
}

/// Cross-entropy `-sum p log q` of the centered, sharpened teacher against
/// the student at `tau_s`. Returns the loss and its gradient in `y`; the
/// teacher side is a constant.
pub fn dino_ce<S: Scalar>(x: &[S], y: &[S], center: &[S], temps: &TempPair) -> Result<(S, Vec<S>)> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch("teacher and student logits".into()));
    }
    let p = teacher_probs(x, center, temps.teacher)?;
    dino_ce_probs(&p, y, temps.student)
}

fn dino_ce_probs<S: Scalar>(p: &[S], y: &[S], tau_s: f64) -> Result<(S, Vec<S>)> {
    if p.len() != y.len() {
        return Err(Error::ShapeMismatch("teacher and student logits".into()));
    }
    let inv = S::one() / S::lit(tau_s);
    let scaled: Vec<S> = y.iter().map(|&v| v * inv).collect();
    let logq = log_softmax(&scaled);
    let loss = -p.iter().zip(&logq).map(|(&a, &b)| a * b).sum::<S>();
    let grad = p.iter().zip(&logq).map(|(&pi, &lq)| (lq.exp() - pi) * inv).collect();
    Ok((loss, grad))
}

/// Multi-crop loss of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MulticropOutput<S> {
    pub loss: S,
    /// Gradient per student view, same order as the input views.
    pub grads: Vec<Vec<S>>,
    pub pairs: usize,
}

/// Mean of `dino_ce` over every (teacher global `g`, student view `v`) pair
/// with `v != g`. Student views are `[g1, g2, l1 .. lL]`.
pub fn multicrop_loss<S: Scalar>(
    teacher_globals: &[Vec<S>],
    student_views: &[Vec<S>],
    center: &[S],
    temps: &TempPair,
    locals: usize,
) -> Result<MulticropOutput<S>> {
    if teacher_globals.len() != 2 {
        return Err(Error::ViewCountMismatch {
            expected: 2,
            got: teacher_globals.len(),
        });
    }
    if student_views.len() != 2 + locals {
        return Err(Error::ViewCountMismatch {
            expected: 2 + locals,
            got: student_views.len(),
        });
    }
    let probs = teacher_globals
        .iter()
        .map(|x| teacher_probs(x, center, temps.teacher))
        .collect::<Result<Vec<_>>>()?;
    let pairs = 2 * student_views.len() - 2;
    let inv = S::one() / S::from_usize(pairs).unwrap();
    let k = center.len();
    let mut out = MulticropOutput {
        loss: S::zero(),
        grads: vec![vec![S::zero(); k]; student_views.len()],
        pairs,
    };
    for (t, p) in probs.iter().enumerate() {
        for (v, y) in student_views.iter().enumerate() {
            if v == t {
                continue;
            }
            let (l, g) = dino_ce_probs(p, y, temps.student)?;
            out.loss += l * inv;
            for (o, gi) in out.grads[v].iter_mut().zip(g) {
                *o += gi * inv;
            }
        }
    }
    Ok(out)
}

/// `(mean per-row entropy, entropy of the mean row)` of teacher
/// distributions.
pub fn collapse_metrics<S: Scalar>(probs: &[Vec<S>]) -> (S, S) {
    if probs.is_empty() {
        return (S::zero(), S::zero());
    }
    let n = S::from_usize(probs.len()).unwrap();
    let k = probs[0].len();
    let mean_row_entropy = probs.iter().map(|p| entropy(p)).sum::<S>() / n;
    let mean: Vec<S> = (0..k).map(|j| probs.iter().map(|p| p[j]).sum::<S>() / n).collect();
    (mean_row_entropy, entropy(&mean))
}
