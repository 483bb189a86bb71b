//! Dense vectors and matrices, a reverse-mode tape for the encoder and a
//! finite-difference gradient oracle.

mod mat;
mod tape;

pub use mat::Mat;
pub use tape::{Block, GradTape, TapeGrads};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Norms below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm<S: Scalar>(v: &[S]) -> S {
    dot(v, v).sqrt()
}

pub fn squared_distance<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

/// `y += alpha * x`
#[inline]
pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn l2_normalize<S: Scalar>(v: &[S]) -> Result<Vec<S>> {
    let n = norm(v);
    if !(n.to_f64_lossy() >= ZERO_NORM) {
        return Err(Error::ZeroNorm(n.to_f64_lossy()));
    }
    Ok(v.iter().map(|&x| x / n).collect())
}

/// Cosine similarity, clamped into `[-1, 1]` against rounding.
pub fn cosine<S: Scalar>(u: &[S], v: &[S]) -> Result<S> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {}", u.len(), v.len())));
    }
    let (nu, nv) = (norm(u), norm(v));
    for n in [nu, nv] {
        if !(n.to_f64_lossy() >= ZERO_NORM) {
            return Err(Error::ZeroNorm(n.to_f64_lossy()));
        }
    }
    let c = dot(u, v) / (nu * nv);
    Ok(c.max(-S::one()).min(S::one()))
}

pub fn log_sum_exp<S: Scalar>(x: &[S]) -> S {
    let max = x.iter().copied().fold(S::neg_infinity(), S::max);
    if max == S::neg_infinity() {
        return max;
    }
    let sum: S = x.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Softmax of `x` (no temperature), computed with max-subtraction.
pub fn softmax<S: Scalar>(x: &[S]) -> Vec<S> {
    let max = x.iter().copied().fold(S::neg_infinity(), S::max);
    let mut out: Vec<S> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: S = out.iter().copied().sum();
    for o in &mut out {
        *o /= sum;
    }
    out
}

pub fn log_softmax<S: Scalar>(x: &[S]) -> Vec<S> {
    let lse = log_sum_exp(x);
    x.iter().map(|&v| v - lse).collect()
}

/// Softmax of `logits / tau`.
pub fn softmax_temp<S: Scalar>(logits: &[S], tau: S) -> Result<Vec<S>> {
    if !(tau > S::zero()) {
        return Err(Error::NonPositiveTemperature(tau.to_f64_lossy()));
    }
    let scaled: Vec<S> = logits.iter().map(|&v| v / tau).collect();
    Ok(softmax(&scaled))
}

/// Shannon entropy in nats; zero-probability entries contribute nothing.
pub fn entropy<S: Scalar>(p: &[S]) -> S {
    -p.iter()
        .filter(|&&x| x > S::zero())
        .fold(S::zero(), |acc, &x| acc + x * x.ln())
}

pub fn all_finite<S: Scalar>(v: &[S]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Central-difference gradient of `f` at `x`, one coordinate at a time.
pub fn finite_diff_grad<S: Scalar, F>(mut f: F, x: &[S], h: S) -> Vec<S>
where
    F: FnMut(&[S]) -> S,
{
    let mut probe = x.to_vec();
    let two_h = h + h;
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / two_h
        })
        .collect()
}

/// Largest elementwise relative error `|a-b| / max(|a|, |b|, floor)`.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
