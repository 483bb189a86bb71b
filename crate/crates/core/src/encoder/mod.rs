//! Frame-level affine+ReLU layers, mean/std statistics pooling and an MLP
//! head ending in L2 normalization.
//!
//! ```text
//! frames (T x F) -> [affine -> relu] x L -> mean|std pool -> affine
//!   -> standardize -> relu -> affine -> l2 normalize
//! ```
//!
//! The standardization uses running per-feature statistics that are frozen
//! during a forward pass; they are refreshed from batches of student hidden
//! activations between steps.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;
use crate::tensor::{Block, GradTape, Mat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub input_dim: usize,
    pub frame_widths: Vec<usize>,
    pub head_hidden: usize,
    pub embed_dim: usize,
    /// Standardize the hidden head layer with running statistics.
    pub head_norm: bool,
    /// Variance floor inside the pooled standard deviation.
    pub pool_eps: f64,
    pub norm_eps: f64,
    /// Weight of the newest batch when refreshing running statistics.
    pub stats_momentum: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_dim: 20,
            frame_widths: vec![64, 64],
            head_hidden: 64,
            embed_dim: 32,
            head_norm: true,
            pool_eps: 1e-8,
            norm_eps: 1e-5,
            stats_momentum: 0.001,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_widths.is_empty() {
            return Err(Error::InvalidConfig("encoder needs at least one frame layer".into()));
        }
        if self.input_dim == 0 || self.head_hidden == 0 || self.embed_dim == 0 || self.frame_widths.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.stats_momentum) {
            return Err(Error::InvalidConfig("stats_momentum must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Where each parameter matrix lives in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub frame: Vec<(Block, Block)>,
    pub head_w: Block,
    pub head_b: Block,
    pub gamma: Block,
    pub beta: Block,
    pub out_w: Block,
    pub out_b: Block,
    pub len: usize,
}

impl Layout {
    fn new(arch: &ArchConfig) -> Self {
        let mut offset = 0;
        let mut take = |rows: usize, cols: usize| {
            let b = Block { offset, rows, cols };
            offset += rows * cols;
            b
        };
        let mut frame = Vec::new();
        let mut width = arch.input_dim;
        for &w in &arch.frame_widths {
            frame.push((take(width, w), take(1, w)));
            width = w;
        }
        let head_w = take(2 * width, arch.head_hidden);
        let head_b = take(1, arch.head_hidden);
        let gamma = take(1, arch.head_hidden);
        let beta = take(1, arch.head_hidden);
        let out_w = take(arch.head_hidden, arch.embed_dim);
        let out_b = take(1, arch.embed_dim);
        Self {
            frame,
            head_w,
            head_b,
            gamma,
            beta,
            out_w,
            out_b,
            len: offset,
        }
    }

    /// All blocks in storage order.
    pub fn blocks(&self) -> Vec<Block> {
        let mut v: Vec<Block> = self.frame.iter().flat_map(|&(w, b)| [w, b]).collect();
        v.extend([self.head_w, self.head_b, self.gamma, self.beta, self.out_w, self.out_b]);
        v
    }

    fn weight_blocks(&self) -> Vec<Block> {
        let mut v: Vec<Block> = self.frame.iter().map(|&(w, _)| w).collect();
        v.extend([self.head_w, self.out_w]);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<S> {
    pub arch: ArchConfig,
    pub layout: Layout,
    /// Trainable parameters, flat.
    pub values: Vec<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
}

/// Result of a recorded forward pass.
pub struct EncoderOutput<S> {
    pub embedding: Vec<S>,
    pub tape: GradTape<S>,
    /// Hidden head activations before standardization.
    pub hidden: Vec<S>,
}

/// Weights `N(0, 1/fan_in)`, zero biases, unit gains.
pub fn init_params<S: Scalar>(arch: &ArchConfig, seed: u64) -> Result<EncoderParams<S>> {
    arch.validate()?;
    let layout = Layout::new(arch);
    let mut values = vec![S::zero(); layout.len];
    let mut r = rng::stream(seed, Stream::Init, 0);
    for block in layout.weight_blocks() {
        let std = 1.0 / (block.rows as f64).sqrt();
        for v in &mut values[block.range()] {
            let z: f64 = StandardNormal.sample(&mut r);
            *v = S::lit(std * z);
        }
    }
    values[layout.gamma.range()].fill(S::one());
    Ok(EncoderParams {
        arch: arch.clone(),
        running_mean: vec![S::zero(); arch.head_hidden],
        running_var: vec![S::one(); arch.head_hidden],
        layout,
        values,
    })
}

impl<S: Scalar> EncoderParams<S> {
    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    pub fn block(&self, b: Block) -> &[S] {
        b.of(&self.values)
    }

    pub fn forward(&self, frames: &Mat<S>) -> Result<EncoderOutput<S>> {
        if frames.rows() == 0 {
            return Err(Error::ShapeMismatch("empty frame matrix".into()));
        }
        if frames.cols() != self.arch.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "frames have {} features, encoder expects {}",
                frames.cols(),
                self.arch.input_dim
            )));
        }
        let p = &self.values;
        let l = &self.layout;
        let mut tape = GradTape::new(p.len());
        let mut x = frames.clone();
        for &(w, b) in &l.frame {
            x = tape.affine(x, p, w, b)?;
            x = tape.relu(x);
        }
        let pooled = tape.mean_std_pool(x, S::lit(self.arch.pool_eps))?;
        let mut h = tape.affine(pooled, p, l.head_w, l.head_b)?;
        let hidden = h.data().to_vec();
        if self.arch.head_norm {
            h = tape.standardize(
                h,
                p,
                l.gamma,
                l.beta,
                &self.running_mean,
                &self.running_var,
                S::lit(self.arch.norm_eps),
            )?;
        }
        let h = tape.relu(h);
        let out = tape.affine(h, p, l.out_w, l.out_b)?;
        let embedding = tape.l2_normalize(out)?.into_data();
        Ok(EncoderOutput {
            embedding,
            tape,
            hidden,
        })
    }

    /// Forward pass without keeping the tape.
    pub fn embed(&self, frames: &Mat<S>) -> Result<Vec<S>> {
        Ok(self.forward(frames)?.embedding)
    }

    /// Moves running statistics toward the batch mean and biased variance of
    /// `hidden` rows.
    pub fn update_running_stats(&mut self, hidden: &[Vec<S>]) {
        if hidden.is_empty() || !self.arch.head_norm {
            return;
        }
        let n = S::from_usize(hidden.len()).unwrap();
        let m = S::lit(self.arch.stats_momentum);
        for j in 0..self.running_mean.len() {
            let mean = hidden.iter().map(|h| h[j]).sum::<S>() / n;
            let var = hidden.iter().map(|h| (h[j] - mean) * (h[j] - mean)).sum::<S>() / n;
            self.running_mean[j] = (S::one() - m) * self.running_mean[j] + m * mean;
            self.running_var[j] = (S::one() - m) * self.running_var[j] + m * var;
        }
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.layout != other.layout || self.running_mean.len() != other.running_mean.len() {
            return Err(Error::ShapeMismatch("encoder architectures differ".into()));
        }
        Ok(())
    }

    /// `self <- m * self + (1 - m) * source`, buffers included.
    pub fn ema_from(&mut self, source: &Self, m: S) -> Result<()> {
        self.check_same_shape(source)?;
        let blend = |dst: &mut [S], src: &[S]| {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = m * *d + (S::one() - m) * s;
            }
        };
        blend(&mut self.values, &source.values);
        blend(&mut self.running_mean, &source.running_mean);
        blend(&mut self.running_var, &source.running_var);
        Ok(())
    }
}

/// Replays a forward tape; returns the flat gradient of every parameter.
pub fn backward<S: Scalar>(tape: &mut GradTape<S>, grad_wrt_embedding: &[S]) -> Result<Vec<S>> {
    let upstream = Mat::from_vec(1, grad_wrt_embedding.len(), grad_wrt_embedding.to_vec())?;
    Ok(tape.backward(upstream)?.params)
}

/// Student (query) and teacher (key, momentum) encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPair<S> {
    pub student: EncoderParams<S>,
    pub teacher: EncoderParams<S>,
    pub momentum: S,
}

impl<S: Scalar> EncoderPair<S> {
    /// Teacher starts as a copy of the student.
    pub fn new(student: EncoderParams<S>, momentum: S) -> Self {
        Self {
            teacher: student.clone(),
            student,
            momentum,
        }
    }

    pub fn ema_update(&mut self) -> Result<()> {
        self.teacher.ema_from(&self.student, self.momentum)
    }
}
