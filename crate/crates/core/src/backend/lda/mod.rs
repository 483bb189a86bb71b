//! Pseudo-labelling by k-means and LDA trained on the pseudo labels.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{score_trials, EmbeddingTable, ScoreSet};
use crate::cssl::{kmeans_fit, KMeansConfig};
use crate::data::Trial;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{l2_normalize, Mat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    /// Pseudo-label cluster count.
    pub clusters: usize,
    /// Output dimension; `0` means half the embedding dimension.
    pub lda_dim: usize,
    /// Within-scatter ridge as a fraction of `trace(S_w) / D`.
    pub reg_scale: f64,
    /// Subtract the training mean before projecting.
    pub center: bool,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            clusters: 48,
            lda_dim: 0,
            reg_scale: 1e-4,
            center: true,
            kmeans_iters: 50,
            seed: 0,
        }
    }
}

/// Projection `D x d_out` with `W^T S_w W = I`, plus the training mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel<S> {
    pub projection: Mat<S>,
    pub mean: Vec<S>,
    pub center: bool,
    /// Generalized eigenvalues of the kept directions, descending.
    pub eigenvalues: Vec<S>,
}

impl<S: Scalar> LdaModel<S> {
    pub fn input_dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.cols()
    }

    /// Linear projection without length normalization.
    pub fn project(&self, e: &[S]) -> Vec<S> {
        let d_out = self.output_dim();
        let mut y = vec![S::zero(); d_out];
        for (i, &x) in e.iter().enumerate() {
            let x = if self.center { x - self.mean[i] } else { x };
            for (o, &w) in y.iter_mut().zip(self.projection.row(i)) {
                *o += x * w;
            }
        }
        y
    }
}

/// Cluster ids from k-means on the embeddings.
pub fn pseudo_label<S: Scalar>(embeddings: &[Vec<S>], clusters: usize, seed: u64) -> Result<Vec<usize>> {
    let cfg = KMeansConfig {
        clusters,
        ..Default::default()
    };
    Ok(kmeans_fit(embeddings, &cfg, seed)?.assignments)
}

fn to_f64<S: Scalar>(rows: &[Vec<S>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().map(|x| x.to_f64_lossy()).collect())
        .collect()
}

/// Fisher LDA. Solves `S_b w = lambda (S_w + reg I) w` through a Cholesky
/// factor of the regularized within-class scatter.
pub fn lda_fit<S: Scalar>(
    embeddings: &[Vec<S>],
    labels: &[usize],
    d_out: usize,
    reg_scale: f64,
    center: bool,
) -> Result<LdaModel<S>> {
    if embeddings.len() != labels.len() || embeddings.is_empty() {
        return Err(Error::ShapeMismatch("embeddings and labels".into()));
    }
    let x = to_f64(embeddings);
    let dim = x[0].len();
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    if groups.len() < 2 || groups.values().any(|g| g.len() < 2) {
        return Err(Error::InsufficientData(
            "LDA needs at least two classes of at least two members".into(),
        ));
    }
    if d_out == 0 || d_out > dim.min(groups.len() - 1) {
        return Err(Error::InvalidConfig(format!(
            "LDA output dimension {d_out} must lie in 1..={}",
            dim.min(groups.len() - 1)
        )));
    }

    let n = x.len() as f64;
    let mean = DVector::from_fn(dim, |j, _| x.iter().map(|r| r[j]).sum::<f64>() / n);
    let mut sw = DMatrix::<f64>::zeros(dim, dim);
    let mut sb = DMatrix::<f64>::zeros(dim, dim);
    for members in groups.values() {
        let m = members.len() as f64;
        let mu = DVector::from_fn(dim, |j, _| members.iter().map(|&i| x[i][j]).sum::<f64>() / m);
        for &i in members {
            let d = DVector::from_column_slice(&x[i]) - &mu;
            sw.ger(1.0, &d, &d, 1.0);
        }
        let d = &mu - &mean;
        sb.ger(m, &d, &d, 1.0);
    }
    let lambda = reg_scale * sw.trace() / dim as f64;
    for j in 0..dim {
        sw[(j, j)] += lambda;
    }
    let chol = sw.cholesky().ok_or(Error::SingularScatter)?;
    let l = chol.l();
    let a = l.solve_lower_triangular(&sb).ok_or(Error::SingularScatter)?;
    let m = l.solve_lower_triangular(&a.transpose()).ok_or(Error::SingularScatter)?;
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let u = DMatrix::from_fn(dim, d_out, |r, c| eig.eigenvectors[(r, order[c])]);
    let w = l.transpose().solve_upper_triangular(&u).ok_or(Error::SingularScatter)?;

    let mut proj = Vec::with_capacity(dim * d_out);
    for r in 0..dim {
        for c in 0..d_out {
            proj.push(S::lit(w[(r, c)]));
        }
    }
    Ok(LdaModel {
        projection: Mat::from_vec(dim, d_out, proj)?,
        mean: mean.iter().map(|&v| S::lit(v)).collect(),
        center,
        eigenvalues: order[..d_out].iter().map(|&i| S::lit(eig.eigenvalues[i])).collect(),
    })
}

/// Projects and length-normalizes.
pub fn lda_transform<S: Scalar>(model: &LdaModel<S>, e: &[S]) -> Result<Vec<S>> {
    if e.len() != model.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "embedding of dim {} for an LDA model of input dim {}",
            e.len(),
            model.input_dim()
        )));
    }
    l2_normalize(&model.project(e))
}

/// Cluster `train`, fit LDA on the pseudo labels (singleton clusters are
/// left out), project `eval` and score `trials` with CDS.
pub fn backend_pipeline<S: Scalar>(
    train: &[Vec<S>],
    eval: &EmbeddingTable<S>,
    trials: &[Trial],
    cfg: &BackendConfig,
) -> Result<(ScoreSet<S>, LdaModel<S>)> {
    let km = KMeansConfig {
        clusters: cfg.clusters,
        max_iters: cfg.kmeans_iters,
        ..Default::default()
    };
    let bank = kmeans_fit(train, &km, cfg.seed)?;
    let keep: Vec<usize> = (0..train.len())
        .filter(|&i| bank.sizes[bank.assignments[i]] >= 2)
        .collect();
    let x: Vec<Vec<S>> = keep.iter().map(|&i| train[i].clone()).collect();
    let y: Vec<usize> = keep.iter().map(|&i| bank.assignments[i]).collect();
    let classes = bank.sizes.iter().filter(|&&z| z >= 2).count();
    let dim = train[0].len();
    let want = if cfg.lda_dim == 0 { dim / 2 } else { cfg.lda_dim };
    let d_out = want.min(dim).min(classes.saturating_sub(1)).max(1);
    let model = lda_fit(&x, &y, d_out, cfg.reg_scale, cfg.center)?;
    let rows = eval
        .rows
        .iter()
        .map(|e| lda_transform(&model, e))
        .collect::<Result<Vec<_>>>()?;
    let projected = EmbeddingTable::new(eval.ids.clone(), rows)?;
    Ok((score_trials(&projected, trials)?, model))
}
