use super::*;
use crate::rng::{stream, Stream};
use rand::Rng as _;

/// Quadratic sweep: counts errors at every candidate threshold directly.
fn oracle_points(scores: &[f64], targets: &[bool]) -> Vec<(f64, f64, f64)> {
    let mut uniq: Vec<f64> = scores.to_vec();
    uniq.sort_by(f64::total_cmp);
    uniq.dedup();
    let mut thresholds = vec![uniq[0]];
    for w in uniq.windows(2) {
        thresholds.push((w[0] + w[1]) / 2.0);
    }
    thresholds.push(uniq[uniq.len() - 1] + 1.0);
    let nt = targets.iter().filter(|&&t| t).count() as f64;
    let nn = targets.len() as f64 - nt;
    thresholds
        .into_iter()
        .map(|th| {
            let mut fa = 0.0;
            let mut miss = 0.0;
            for (&s, &t) in scores.iter().zip(targets) {
                if t && s < th {
                    miss += 1.0;
                }
                if !t && s >= th {
                    fa += 1.0;
                }
            }
            (th, fa / nn, miss / nt)
        })
        .collect()
}

fn oracle_eer(scores: &[f64], targets: &[bool]) -> f64 {
    let pts = oracle_points(scores, targets);
    for i in 1..pts.len() {
        let (_, fa0, m0) = pts[i - 1];
        let (_, fa1, m1) = pts[i];
        if m1 >= fa1 {
            let t = (m0 - fa0) / ((m0 - fa0) - (m1 - fa1));
            return fa0 + t * (fa1 - fa0);
        }
    }
    unreachable!()
}

fn oracle_dcf(scores: &[f64], targets: &[bool]) -> f64 {
    oracle_points(scores, targets)
        .into_iter()
        .map(|(_, fa, miss)| (0.01 * miss + 0.99 * fa) / 0.01)
        .fold(f64::INFINITY, f64::min)
}

fn random_set(r: &mut crate::rng::Rng) -> ScoreSet<f64> {
    let n = r.random_range(2..=2000);
    let mut targets: Vec<bool> = (0..n).map(|_| r.random::<f64>() < 0.3).collect();
    targets[0] = true;
    targets[1] = false;
    let quantize = r.random::<bool>();
    let scores = targets
        .iter()
        .map(|&t| {
            let s = r.random::<f64>() + if t { 0.4 } else { 0.0 };
            if quantize {
                (s * 20.0).round() / 20.0
            } else {
                s
            }
        })
        .collect();
    ScoreSet::from_scores(scores, targets)
}

#[test]
fn hand_examples() {
    let set = ScoreSet::from_scores(vec![0.9, 0.8, 0.85, 0.1], vec![true, true, false, false]);
    let (eer, _) = compute_eer(&set).unwrap();
    assert!((eer - oracle_eer(&set.scores, &set.targets)).abs() < 1e-15);
    assert!((eer - 0.5).abs() < 1e-15);

    let sep = ScoreSet::from_scores(vec![0.9, 0.8, 0.3, 0.1], vec![true, true, false, false]);
    assert_eq!(compute_eer(&sep).unwrap().0, 0.0);
    assert_eq!(compute_min_dcf(&sep, DcfParams::default()).unwrap().0, 0.0);

    let tied = ScoreSet::from_scores(vec![0.4; 6], vec![true, false, true, false, false, true]);
    assert_eq!(compute_eer(&tied).unwrap().0, 0.5);
    assert_eq!(compute_min_dcf(&tied, DcfParams::default()).unwrap().0, 1.0);

    let none = ScoreSet::from_scores(vec![0.1, 0.2], vec![true, true]);
    assert!(matches!(compute_eer(&none), Err(Error::DegenerateTrialSet)));
}

#[test]
fn metrics_match_oracles() {
    let mut r = stream(5, Stream::Trials, 0);
    for _ in 0..200 {
        let set = random_set(&mut r);
        let eer = compute_eer(&set).unwrap().0;
        assert!((eer - oracle_eer(&set.scores, &set.targets)).abs() < 1e-12);
        let dcf = compute_min_dcf(&set, DcfParams::default()).unwrap().0;
        assert!((dcf - oracle_dcf(&set.scores, &set.targets)).abs() < 1e-12);
    }
}

#[test]
fn monotone_transform_invariance() {
    let mut r = stream(6, Stream::Trials, 0);
    for _ in 0..50 {
        let set = random_set(&mut r);
        let e = compute_eer(&set).unwrap().0;
        let d = compute_min_dcf(&set, DcfParams::default()).unwrap().0;
        for t in [set.map(f64::exp), set.map(|s| 3.0 * s - 7.0)] {
            assert!((compute_eer(&t).unwrap().0 - e).abs() < 1e-12);
            assert!((compute_min_dcf(&t, DcfParams::default()).unwrap().0 - d).abs() < 1e-12);
        }
    }
}

#[test]
fn det_curve_shape_and_crossing() {
    let one = ScoreSet::from_scores(vec![0.7, 0.2], vec![true, false]);
    let c = det_points(&one).unwrap();
    assert_eq!(c.fa, vec![1.0, 0.0, 0.0]);
    assert_eq!(c.miss, vec![0.0, 0.0, 1.0]);

    let mut r = stream(7, Stream::Trials, 0);
    for _ in 0..50 {
        let set = random_set(&mut r);
        let c = det_points(&set).unwrap();
        assert_eq!((c.fa[0], c.miss[0]), (1.0, 0.0));
        assert_eq!((*c.fa.last().unwrap(), *c.miss.last().unwrap()), (0.0, 1.0));
        for i in 1..c.fa.len() {
            assert!(c.fa[i] <= c.fa[i - 1] && c.miss[i] >= c.miss[i - 1]);
        }
        assert!((c.crossing() - compute_eer(&set).unwrap().0).abs() < 1e-9);
    }
}

#[test]
fn det_round_trip() {
    let mut r = stream(8, Stream::Trials, 0);
    let set = random_set(&mut r);
    let c = det_points(&set).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("det.csv");
    det_export(&c, &p).unwrap();
    let back = det_import(&p).unwrap();
    assert_eq!(back, c);
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.lines().nth(1).unwrap().ends_with("inf"));
}
