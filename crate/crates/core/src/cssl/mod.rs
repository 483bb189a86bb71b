//! Contrastive objectives and class-collision correction.
//!
//! All losses take unit-norm embeddings and return gradients with respect
//! to the anchor (student) embeddings only; positives, queue keys and
//! prototypes are constants.

mod collision;
mod infonce;
mod pfn;
mod proto;
mod queue;

pub use collision::{c3_loss, classify_components, reweighted_info_nce, C3Output, Partition, ReweightConfig};
pub use infonce::{in_batch_info_nce, moco_info_nce, simclr_loss};
pub use pfn::{false_negative_mask, pfn_compute, pfn_controlled_dropout, retained_pfn};
pub use proto::{
    concentration, kmeans_fit, proto_nce, raw_concentration, read_bank, write_bank, KMeansConfig, PrototypeBank,
};
pub use queue::NegativeQueue;

use crate::scalar::Scalar;
use crate::tensor::{dot, log_sum_exp, softmax};

/// Loss value, per-component losses and per-anchor gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<S> {
    pub loss: S,
    /// Per-anchor losses `L_i` before averaging.
    pub components: Vec<S>,
    pub grads: Vec<Vec<S>>,
}

impl<S: Scalar> LossOutput<S> {
    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            loss: S::zero(),
            components: vec![S::zero(); n],
            grads: vec![vec![S::zero(); dim]; n],
        }
    }
}

/// `-log softmax(logits)[0]` and its gradient with respect to `q` when
/// `logit_j = q . key_j * scale_j`.
///
/// Returns `(loss, coefficients)` with `coefficients_j = p_j - [j == 0]`.
pub(crate) fn nce_row<S: Scalar>(logits: &[S]) -> (S, Vec<S>) {
    let loss = log_sum_exp(logits) - logits[0];
    let mut coef = softmax(logits);
    coef[0] -= S::one();
    (loss, coef)
}

pub(crate) fn scaled_logit<S: Scalar>(q: &[S], k: &[S], inv_tau: S) -> S {
    dot(q, k) * inv_tau
}
