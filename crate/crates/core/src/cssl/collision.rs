//! False-negative detection, re-weighted InfoNCE and the combined C3 loss.

use serde::{Deserialize, Serialize};

use super::{moco_info_nce, proto_nce, LossOutput, PrototypeBank};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::{axpy, dot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReweightConfig {
    /// A key counts as a suspected false negative when its similarity to the
    /// anchor exceeds this fraction of the anchor-positive similarity.
    pub sim_ratio_threshold: f64,
    /// Anchor-positive similarity required before suspicion applies.
    pub anchor_pos_threshold: f64,
    /// Weight of the true-negative set mean.
    pub w_tn: f64,
    /// Weight of the false-negative set mean.
    pub w_fn: f64,
}

impl Default for ReweightConfig {
    fn default() -> Self {
        Self {
            sim_ratio_threshold: 0.8,
            anchor_pos_threshold: 0.4,
            w_tn: 0.8,
            w_fn: 0.2,
        }
    }
}

impl ReweightConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !open_unit(self.sim_ratio_threshold) || !open_unit(self.anchor_pos_threshold) {
            return Err(Error::InvalidConfig("thresholds must lie in (0, 1)".into()));
        }
        if !(self.w_tn >= 0.0 && self.w_fn >= 0.0) {
            return Err(Error::InvalidConfig("set weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Disjoint split of anchor indices into predicted true-negative and
/// false-negative components, each in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Partition {
    pub tn: Vec<usize>,
    pub fn_: Vec<usize>,
}

/// Component `i` is a suspected false negative when some key `j` satisfies
/// `q_i . k_j > ratio * (q_i . p_i)` and `q_i . p_i > anchor_pos_threshold`.
pub fn classify_components<S: Scalar>(
    anchors: &[Vec<S>],
    positives: &[Vec<S>],
    keys: &[Vec<S>],
    cfg: &ReweightConfig,
) -> Partition {
    let ratio = S::lit(cfg.sim_ratio_threshold);
    let floor = S::lit(cfg.anchor_pos_threshold);
    let mut part = Partition::default();
    for (i, (q, p)) in anchors.iter().zip(positives).enumerate() {
        let pos = dot(q, p);
        let bar = ratio * pos;
        let suspicious = pos > floor && keys.iter().any(|k| dot(q, k) > bar);
        if suspicious {
            part.fn_.push(i);
        } else {
            part.tn.push(i);
        }
    }
    part
}

/// `w_tn * mean(L_i, TN) + w_fn * mean(L_i, FN)` over MoCo components.
///
/// An empty set contributes nothing; the other weight is not renormalized.
pub fn reweighted_info_nce<S: Scalar>(
    anchors: &[Vec<S>],
    positives: &[Vec<S>],
    keys: &[Vec<S>],
    cfg: &ReweightConfig,
    tau: S,
) -> Result<(LossOutput<S>, Partition)> {
    let base = moco_info_nce(anchors, positives, keys, tau)?;
    let part = classify_components(anchors, positives, keys, cfg);
    let n = S::from_usize(anchors.len()).unwrap();
    let dim = anchors[0].len();
    let mut out = LossOutput::zeros(anchors.len(), dim);
    out.components = base.components.clone();
    for (set, w) in [(&part.tn, cfg.w_tn), (&part.fn_, cfg.w_fn)] {
        if set.is_empty() {
            continue;
        }
        let scale = S::lit(w) / S::from_usize(set.len()).unwrap();
        for &i in set {
            out.loss += scale * base.components[i];
            // Base gradients carry the 1/N of the plain mean.
            axpy(scale * n, &base.grads[i], &mut out.grads[i]);
        }
    }
    Ok((out, part))
}

#[derive(Debug, Clone, PartialEq)]
pub struct C3Output<S> {
    pub loss: S,
    pub reweighted: S,
    pub proto: S,
    pub partition: Partition,
    pub grads: Vec<Vec<S>>,
}

/// Re-weighted InfoNCE plus `alpha` times ProtoNCE.
#[allow(clippy::too_many_arguments)]
pub fn c3_loss<S: Scalar>(
    anchors: &[Vec<S>],
    positives: &[Vec<S>],
    keys: &[Vec<S>],
    bank: &PrototypeBank<S>,
    clusters: &[usize],
    cfg: &ReweightConfig,
    tau: S,
    alpha: S,
    negatives: usize,
    rng: &mut rng::Rng,
) -> Result<C3Output<S>> {
    let (re, partition) = reweighted_info_nce(anchors, positives, keys, cfg, tau)?;
    let proto = proto_nce(anchors, clusters, bank, negatives, rng)?;
    let mut grads = re.grads;
    for (g, pg) in grads.iter_mut().zip(&proto.grads) {
        axpy(alpha, pg, g);
    }
    Ok(C3Output {
        loss: re.loss + alpha * proto.loss,
        reweighted: re.loss,
        proto: proto.loss,
        partition,
        grads,
    })
}
