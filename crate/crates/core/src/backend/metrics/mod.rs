//! EER, minDCF and DET curves from a full threshold sweep.
//!
//! A trial is accepted when its score is at least the threshold. With `u_0 <
//! ... < u_{U-1}` the distinct scores, the sweep visits `U + 1` thresholds:
//! `u_0` (accept all), the midpoints `(u_{i-1} + u_i) / 2`, and `u_{U-1} + 1`
//! (reject all). Each yields one `(false alarm, miss)` operating point.

use std::io::{BufRead, Write};
use std::path::Path;

use statrs::distribution::{ContinuousCDF, Normal};

use super::ScoreSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Operating point at one sweep threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fa: f64,
    pub miss: f64,
}

/// Full sweep from `(fa 1, miss 0)` to `(fa 0, miss 1)`.
pub fn roc_points<S: Scalar>(set: &ScoreSet<S>) -> Result<Vec<RocPoint>> {
    let n_tar = set.targets.iter().filter(|&&t| t).count();
    let n_non = set.len() - n_tar;
    if n_tar == 0 || n_non == 0 {
        return Err(Error::DegenerateTrialSet);
    }
    let mut pairs: Vec<(f64, bool)> = set
        .scores
        .iter()
        .map(|s| s.to_f64_lossy())
        .zip(set.targets.iter().copied())
        .collect();
    if pairs.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::Format("non-finite score".into()));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (nt, nn) = (n_tar as f64, n_non as f64);
    let mut out = vec![RocPoint {
        threshold: pairs[0].0,
        fa: 1.0,
        miss: 0.0,
    }];
    let (mut rejected_tar, mut rejected_non) = (0usize, 0usize);
    let mut i = 0;
    while i < pairs.len() {
        let u = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == u {
            if pairs[i].1 {
                rejected_tar += 1;
            } else {
                rejected_non += 1;
            }
            i += 1;
        }
        let threshold = if i < pairs.len() {
            (u + pairs[i].0) / 2.0
        } else {
            u + 1.0
        };
        out.push(RocPoint {
            threshold,
            fa: (n_non - rejected_non) as f64 / nn,
            miss: rejected_tar as f64 / nt,
        });
    }
    Ok(out)
}

/// Equal error rate by linear interpolation between adjacent sweep points.
/// Returns `(eer, threshold)`.
pub fn compute_eer<S: Scalar>(set: &ScoreSet<S>) -> Result<(f64, f64)> {
    let pts = roc_points(set)?;
    Ok(eer_from_points(&pts))
}

pub(crate) fn eer_from_points(pts: &[RocPoint]) -> (f64, f64) {
    let i = pts.iter().position(|p| p.miss >= p.fa).unwrap_or(pts.len() - 1);
    if i == 0 {
        return (pts[0].fa, pts[0].threshold);
    }
    let (a, b) = (pts[i - 1], pts[i]);
    let da = a.miss - a.fa;
    let db = b.miss - b.fa;
    let t = da / (da - db);
    (a.fa + t * (b.fa - a.fa), a.threshold + t * (b.threshold - a.threshold))
}

/// Detection cost parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self {
            p_target: 0.01,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

/// Normalized minimum detection cost over the sweep; `(min_dcf, threshold)`.
pub fn compute_min_dcf<S: Scalar>(set: &ScoreSet<S>, params: DcfParams) -> Result<(f64, f64)> {
    let pts = roc_points(set)?;
    let DcfParams { p_target, c_miss, c_fa } = params;
    let norm = (c_miss * p_target).min(c_fa * (1.0 - p_target));
    let mut best = (f64::INFINITY, 0.0);
    for p in &pts {
        let dcf = (c_miss * p_target * p.miss + c_fa * (1.0 - p_target) * p.fa) / norm;
        if dcf < best.0 {
            best = (dcf, p.threshold);
        }
    }
    Ok(best)
}

/// Ordered `(fa, miss)` operating points.
#[derive(Debug, Clone, PartialEq)]
pub struct DetCurve {
    pub fa: Vec<f64>,
    pub miss: Vec<f64>,
}

impl DetCurve {
    /// Interpolated crossing with the `fa == miss` diagonal.
    pub fn crossing(&self) -> f64 {
        for i in 1..self.fa.len() {
            let da = self.miss[i - 1] - self.fa[i - 1];
            let db = self.miss[i] - self.fa[i];
            if db >= 0.0 {
                if da >= 0.0 {
                    return self.fa[i - 1];
                }
                let t = da / (da - db);
                return self.fa[i - 1] + t * (self.fa[i] - self.fa[i - 1]);
            }
        }
        self.fa[self.fa.len() - 1]
    }
}

pub fn det_points<S: Scalar>(set: &ScoreSet<S>) -> Result<DetCurve> {
    let pts = roc_points(set)?;
    Ok(DetCurve {
        fa: pts.iter().map(|p| p.fa).collect(),
        miss: pts.iter().map(|p| p.miss).collect(),
    })
}

const DET_HEADER: &str = "fa,miss,probit_fa,probit_miss";

/// CSV with raw rates and their standard-normal quantiles.
pub fn det_export(curve: &DetCurve, path: &Path) -> Result<()> {
    let normal = Normal::standard();
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{DET_HEADER}")?;
    for (&fa, &miss) in curve.fa.iter().zip(&curve.miss) {
        writeln!(w, "{fa},{miss},{},{}", normal.inverse_cdf(fa), normal.inverse_cdf(miss))?;
    }
    w.flush()?;
    Ok(())
}

pub fn det_import(path: &Path) -> Result<DetCurve> {
    let mut lines = std::io::BufReader::new(std::fs::File::open(path)?).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != DET_HEADER {
        return Err(Error::Format(format!("bad DET header `{header}`")));
    }
    let mut curve = DetCurve {
        fa: Vec::new(),
        miss: Vec::new(),
    };
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut f = line.split(',');
        let mut next = || -> Result<f64> {
            f.next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("DET line `{line}`")))
        };
        curve.fa.push(next()?);
        curve.miss.push(next()?);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests;
