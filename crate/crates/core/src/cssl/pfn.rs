//! False-negative bookkeeping for the in-batch negative regime, where each
//! anchor's keys are the other `N - 1` batch positives.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// `mask[i]` is true when label `labels[i]` occurs elsewhere in the batch.
pub fn false_negative_mask(labels: &[usize]) -> Vec<bool> {
    let mut counts = std::collections::HashMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    labels.iter().map(|l| counts[l] >= 2).collect()
}

/// Fraction of anchors with at least one false-negative key.
pub fn pfn_compute(labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = false_negative_mask(labels).into_iter().filter(|&b| b).count();
    hits as f64 / labels.len() as f64
}

/// Fraction of `retained` anchors flagged in `mask`.
pub fn retained_pfn(mask: &[bool], retained: &[usize]) -> f64 {
    if retained.is_empty() {
        return 0.0;
    }
    retained.iter().filter(|&&i| mask[i]).count() as f64 / retained.len() as f64
}

/// Randomly drops false-negative-containing components so that the retained
/// set reaches `target` p_fn to within one component.
///
/// Every clean component is kept; `round(target (N - F) / (1 - target))` of
/// the `F` flagged ones survive, chosen uniformly. Returns retained indices
/// in ascending order.
pub fn pfn_controlled_dropout(labels: &[usize], target: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    let mask = false_negative_mask(labels);
    let natural = pfn_compute(labels);
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::InvalidConfig(format!("p_fn target {target} outside [0, 1]")));
    }
    if target > natural + 1e-12 {
        return Err(Error::TargetAboveNatural { target, natural });
    }
    let flagged: Vec<usize> = (0..labels.len()).filter(|&i| mask[i]).collect();
    let clean = labels.len() - flagged.len();
    let keep = if target >= natural {
        flagged.len()
    } else {
        ((target * clean as f64 / (1.0 - target)).round() as usize).min(flagged.len())
    };
    let mut retained: Vec<usize> = (0..labels.len()).filter(|&i| !mask[i]).collect();
    if keep == flagged.len() {
        retained.extend(&flagged);
    } else {
        retained.extend(sample(rng, flagged.len(), keep).into_iter().map(|k| flagged[k]));
    }
    retained.sort_unstable();
    Ok(retained)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::Rng as _;

    fn brute(labels: &[usize]) -> f64 {
        let n = labels.len();
        let mut hits = 0;
        for i in 0..n {
            let mut any = false;
            for j in 0..n {
                if i != j && labels[i] == labels[j] {
                    any = true;
                }
            }
            hits += any as usize;
        }
        hits as f64 / n as f64
    }

    #[test]
    fn examples() {
        assert_eq!(pfn_compute(&[0, 1, 2, 3]), 0.0);
        assert_eq!(pfn_compute(&[5, 5, 5]), 1.0);
        assert_eq!(pfn_compute(&[0, 1, 2, 0]), 0.5);
    }

    #[test]
    fn matches_double_loop() {
        let mut r = stream(1, Stream::Shuffle, 0);
        for _ in 0..300 {
            let n = r.random_range(1..=64);
            let k = r.random_range(1..=80);
            let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
            assert_eq!(pfn_compute(&labels), brute(&labels));
        }
    }

    #[test]
    fn dropout_limits() {
        let labels = [0, 0, 1, 1, 2, 3, 4, 5];
        let mut r = stream(2, Stream::PfnDropout, 0);
        let all = pfn_controlled_dropout(&labels, 0.5, &mut r).unwrap();
        assert_eq!(all, (0..8).collect::<Vec<_>>());
        let none = pfn_controlled_dropout(&labels, 0.0, &mut r).unwrap();
        assert_eq!(none, vec![4, 5, 6, 7]);
        assert!(matches!(
            pfn_controlled_dropout(&labels, 0.6, &mut r),
            Err(Error::TargetAboveNatural { .. })
        ));
        let same = pfn_compute(&[7, 7]);
        assert_eq!(pfn_controlled_dropout(&[7, 7], same, &mut r).unwrap(), vec![0, 1]);
    }

    #[test]
    fn dropout_hits_target_within_one_component() {
        let labels = [0, 0, 1, 1, 2, 3, 4, 5];
        let mask = false_negative_mask(&labels);
        for seed in 0..50 {
            let mut r = stream(seed, Stream::PfnDropout, 1);
            let kept = pfn_controlled_dropout(&labels, 0.25, &mut r).unwrap();
            let got = retained_pfn(&mask, &kept);
            assert!((got - 0.25).abs() <= 1.0 / kept.len() as f64 + 1e-12);
        }
        // Every subset size choice is covered: check the chosen size is the
        // best achievable over all possible retained counts.
        let mut r = stream(0, Stream::PfnDropout, 2);
        for _ in 0..200 {
            let n = r.random_range(4..=40);
            let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            let natural = pfn_compute(&labels);
            let target = natural * r.random::<f64>();
            let mask = false_negative_mask(&labels);
            let kept = pfn_controlled_dropout(&labels, target, &mut r).unwrap();
            let f = mask.iter().filter(|&&b| b).count();
            let clean = n - f;
            let best = (0..=f)
                .filter(|&k| clean + k > 0)
                .map(|k| (k as f64 / (clean + k) as f64 - target).abs())
                .fold(f64::INFINITY, f64::min);
            let got = (retained_pfn(&mask, &kept) - target).abs();
            assert!(got <= best + 1.0 / kept.len() as f64 + 1e-12);
            assert!(kept.iter().filter(|&&i| !mask[i]).count() == clean);
        }
    }
}
