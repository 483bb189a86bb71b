use super::{nce_row, scaled_logit, LossOutput};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::axpy;

fn check_tau<S: Scalar>(tau: S) -> Result<S> {
    if !(tau > S::zero()) {
        return Err(Error::NonPositiveTemperature(tau.to_f64_lossy()));
    }
    Ok(S::one() / tau)
}

/// NT-Xent over `2N` views laid out as `[v_1..v_N, v'_1..v'_N]`.
///
/// Every view is an anchor whose positive is its partner; the remaining
/// `2N - 2` views are negatives. The loss is the mean over all `2N` anchors
/// and gradients cover every view.
pub fn simclr_loss<S: Scalar>(views: &[Vec<S>], tau: S) -> Result<LossOutput<S>> {
    let inv_tau = check_tau(tau)?;
    if !views.len().is_multiple_of(2) || views.len() < 4 {
        return Err(Error::BatchTooSmall {
            needed: 4,
            got: views.len(),
        });
    }
    let n = views.len() / 2;
    let total = views.len();
    let dim = views[0].len();
    let mut out = LossOutput::zeros(total, dim);
    let inv_count = S::one() / S::from_usize(total).unwrap();
    let mut others = Vec::with_capacity(total - 1);
    for a in 0..total {
        let pos = (a + n) % total;
        others.clear();
        others.push(pos);
        others.extend((0..total).filter(|&j| j != a && j != pos));
        let logits: Vec<S> = others
            .iter()
            .map(|&j| scaled_logit(&views[a], &views[j], inv_tau))
            .collect();
        let (l, coef) = nce_row(&logits);
        out.components[a] = l;
        out.loss += l * inv_count;
        for (&j, &c) in others.iter().zip(&coef) {
            let w = c * inv_tau * inv_count;
            let (anchor, key) = (views[a].clone(), &views[j]);
            axpy(w, key, &mut out.grads[a]);
            axpy(w, &anchor, &mut out.grads[j]);
        }
    }
    Ok(out)
}

/// MoCo InfoNCE: per anchor the denominator holds the positive followed by
/// every queued key. Gradients flow to the anchors only.
pub fn moco_info_nce<S: Scalar>(
    anchors: &[Vec<S>],
    positives: &[Vec<S>],
    queue: &[Vec<S>],
    tau: S,
) -> Result<LossOutput<S>> {
    let inv_tau = check_tau(tau)?;
    if queue.is_empty() {
        return Err(Error::EmptyQueue);
    }
    if anchors.len() != positives.len() || anchors.is_empty() {
        return Err(Error::ShapeMismatch("anchors and positives".into()));
    }
    let dim = anchors[0].len();
    let n = anchors.len();
    let inv_n = S::one() / S::from_usize(n).unwrap();
    let mut out = LossOutput::zeros(n, dim);
    let mut logits = Vec::with_capacity(queue.len() + 1);
    for i in 0..n {
        let q = &anchors[i];
        logits.clear();
        logits.push(scaled_logit(q, &positives[i], inv_tau));
        logits.extend(queue.iter().map(|k| scaled_logit(q, k, inv_tau)));
        let (l, coef) = nce_row(&logits);
        out.components[i] = l;
        out.loss += l * inv_n;
        let g = &mut out.grads[i];
        axpy(coef[0] * inv_tau * inv_n, &positives[i], g);
        for (k, &c) in queue.iter().zip(&coef[1..]) {
            axpy(c * inv_tau * inv_n, k, g);
        }
    }
    Ok(out)
}

/// In-batch InfoNCE (momentum-encoder keys, no queue): anchor `i` scores
/// against all `N` keys with key `i` as its positive. The loss averages the
/// components listed in `retained`; dropped anchors receive no gradient.
pub fn in_batch_info_nce<S: Scalar>(
    anchors: &[Vec<S>],
    keys: &[Vec<S>],
    tau: S,
    retained: &[usize],
) -> Result<LossOutput<S>> {
    let inv_tau = check_tau(tau)?;
    if anchors.len() != keys.len() {
        return Err(Error::ShapeMismatch("anchors and keys".into()));
    }
    if anchors.len() < 2 {
        return Err(Error::BatchTooSmall {
            needed: 2,
            got: anchors.len(),
        });
    }
    let n = anchors.len();
    let dim = anchors[0].len();
    let mut out = LossOutput::zeros(n, dim);
    let mut logits = Vec::with_capacity(n);
    let mut coefs = Vec::with_capacity(n);
    for i in 0..n {
        logits.clear();
        logits.push(scaled_logit(&anchors[i], &keys[i], inv_tau));
        logits.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| scaled_logit(&anchors[i], &keys[j], inv_tau)),
        );
        let (l, coef) = nce_row(&logits);
        out.components[i] = l;
        coefs.push(coef);
    }
    if retained.is_empty() {
        return Ok(out);
    }
    let inv_r = S::one() / S::from_usize(retained.len()).unwrap();
    for &i in retained {
        out.loss += out.components[i] * inv_r;
        let coef = &coefs[i];
        let g = &mut out.grads[i];
        axpy(coef[0] * inv_tau * inv_r, &keys[i], g);
        for (c, j) in coef[1..].iter().zip((0..n).filter(|&j| j != i)) {
            axpy(*c * inv_tau * inv_r, &keys[j], g);
        }
    }
    Ok(out)
}
