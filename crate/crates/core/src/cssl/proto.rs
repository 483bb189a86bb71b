//! k-means prototype bank with per-cluster concentration, and ProtoNCE.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{nce_row, LossOutput};
use crate::error::{Error, Result};
use crate::rng::{stream, Rng, Stream};
use crate::scalar::Scalar;
use crate::tensor::{axpy, dot, l2_normalize, squared_distance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansConfig {
    pub clusters: usize,
    pub max_iters: usize,
    /// Smoothing constant in the concentration denominator.
    pub eps: f64,
    pub phi_min: f64,
    pub phi_max: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            clusters: 48,
            max_iters: 50,
            eps: 10.0,
            phi_min: 0.05,
            phi_max: 1.0,
        }
    }
}

impl KMeansConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 {
            return Err(Error::InvalidConfig("cluster count must be positive".into()));
        }
        if !(self.eps > 0.0 && self.phi_min > 0.0 && self.phi_min <= self.phi_max) {
            return Err(Error::InvalidConfig("need eps > 0 and 0 < phi_min <= phi_max".into()));
        }
        Ok(())
    }
}

/// Unit-norm centroids with concentration `phi_j` per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank<S> {
    pub centroids: Vec<Vec<S>>,
    pub phi: Vec<S>,
    /// Cluster of each fitted embedding.
    pub assignments: Vec<usize>,
    pub sizes: Vec<usize>,
    /// Sum of member distances `||v - c||` per cluster.
    pub dist_sums: Vec<S>,
    pub eps: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    /// Euclidean inertia after every assignment step.
    pub inertia_history: Vec<f64>,
}

impl<S: Scalar> PrototypeBank<S> {
    /// A bank with given centroids and concentrations and no fitted members.
    pub fn from_parts(centroids: Vec<Vec<S>>, phi: Vec<S>) -> Self {
        let m = centroids.len();
        Self {
            centroids,
            phi,
            assignments: Vec::new(),
            sizes: vec![0; m],
            dist_sums: vec![S::zero(); m],
            eps: 10.0,
            phi_min: 0.05,
            phi_max: 1.0,
            inertia_history: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Index of the centroid closest to `v`.
    pub fn nearest(&self, v: &[S]) -> usize {
        nearest(&self.centroids, v).0
    }

    pub fn final_inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

fn nearest<S: Scalar>(centroids: &[Vec<S>], v: &[S]) -> (usize, S) {
    let mut best = (0, S::infinity());
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, v);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// `sum ||v - c|| / (Z ln(Z + eps))` without clamping.
pub fn raw_concentration(dist_sum: f64, z: usize, eps: f64) -> f64 {
    let z = z as f64;
    dist_sum / (z * (z + eps).ln())
}

/// Clamped concentration of cluster `j`. Empty clusters get `phi_max`.
pub fn concentration<S: Scalar>(bank: &PrototypeBank<S>, j: usize) -> S {
    let z = bank.sizes[j];
    if z == 0 {
        return S::lit(bank.phi_max);
    }
    let raw = raw_concentration(bank.dist_sums[j].to_f64_lossy(), z, bank.eps);
    S::lit(raw.clamp(bank.phi_min, bank.phi_max))
}

fn kmeans_pp<S: Scalar>(points: &[Vec<S>], m: usize, rng: &mut Rng) -> Vec<Vec<S>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]).to_f64_lossy())
        .collect();
    while centroids.len() < m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            // Guard against landing on a zero-weight tail from rounding.
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|&w| w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &c).to_f64_lossy());
        }
        centroids.push(c);
    }
    centroids
}

/// k-means++ seeding followed by Euclidean Lloyd iterations; centroids are
/// projected to the unit sphere at the end and members re-assigned to them.
pub fn kmeans_fit<S: Scalar>(points: &[Vec<S>], cfg: &KMeansConfig, seed: u64) -> Result<PrototypeBank<S>> {
    cfg.validate()?;
    let m = cfg.clusters;
    if points.len() < m {
        return Err(Error::TooFewPoints {
            points: points.len(),
            clusters: m,
        });
    }
    let dim = points[0].len();
    let mut rng = stream(seed, Stream::KMeans, 0);
    let mut centroids = kmeans_pp(points, m, &mut rng);
    let mut assign = vec![usize::MAX; points.len()];
    let mut history = Vec::new();

    for _ in 0..cfg.max_iters.max(1) {
        let mut changed = false;
        let mut dists = Vec::with_capacity(points.len());
        let mut inertia = 0.0;
        for (a, p) in assign.iter_mut().zip(points) {
            let (j, d) = nearest(&centroids, p);
            changed |= *a != j;
            *a = j;
            inertia += d.to_f64_lossy();
            dists.push(d);
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![vec![S::zero(); dim]; m];
        let mut counts = vec![0usize; m];
        for (&j, p) in assign.iter().zip(points) {
            axpy(S::one(), p, &mut sums[j]);
            counts[j] += 1;
        }
        let mut taken = vec![false; points.len()];
        for j in 0..m {
            if counts[j] > 0 {
                let inv = S::one() / S::from_usize(counts[j]).unwrap();
                centroids[j] = sums[j].iter().map(|&s| s * inv).collect();
            } else {
                // Reseed an empty cluster at the worst-served point.
                let far = (0..points.len())
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].partial_cmp(&dists[b]).unwrap())
                    .unwrap();
                taken[far] = true;
                centroids[j] = points[far].clone();
            }
        }
    }

    let centroids: Vec<Vec<S>> = centroids
        .iter()
        .map(|c| l2_normalize(c).unwrap_or_else(|_| c.clone()))
        .collect();
    let mut sizes = vec![0usize; m];
    let mut dist_sums = vec![S::zero(); m];
    let assignments: Vec<usize> = points
        .iter()
        .map(|p| {
            let (j, d) = nearest(&centroids, p);
            sizes[j] += 1;
            dist_sums[j] += d.sqrt();
            j
        })
        .collect();
    let mut bank = PrototypeBank {
        phi: vec![S::zero(); m],
        centroids,
        assignments,
        sizes,
        dist_sums,
        eps: cfg.eps,
        phi_min: cfg.phi_min,
        phi_max: cfg.phi_max,
        inertia_history: history,
    };
    bank.phi = (0..m).map(|j| concentration(&bank, j)).collect();
    Ok(bank)
}

/// ProtoNCE: anchor `i` is pulled toward prototype `clusters[i]` against
/// `negatives` distinct other prototypes sampled without replacement. Each
/// logit is `q . c_j / phi_j`.
pub fn proto_nce<S: Scalar>(
    anchors: &[Vec<S>],
    clusters: &[usize],
    bank: &PrototypeBank<S>,
    negatives: usize,
    rng: &mut Rng,
) -> Result<LossOutput<S>> {
    let m = bank.len();
    if m == 0 || bank.phi.len() != m {
        return Err(Error::BankNotFitted);
    }
    if negatives + 1 > m {
        return Err(Error::InvalidConfig(format!(
            "{negatives} negative prototypes requested from a bank of {m}"
        )));
    }
    if anchors.len() != clusters.len() || anchors.is_empty() {
        return Err(Error::ShapeMismatch("anchors and cluster ids".into()));
    }
    let n = anchors.len();
    let inv_n = S::one() / S::from_usize(n).unwrap();
    let mut out = LossOutput::zeros(n, anchors[0].len());
    let mut chosen = Vec::with_capacity(negatives + 1);
    let mut logits = Vec::with_capacity(negatives + 1);
    for (i, q) in anchors.iter().enumerate() {
        let s = clusters[i];
        if s >= m {
            return Err(Error::ShapeMismatch(format!("cluster {s} outside bank of {m}")));
        }
        chosen.clear();
        chosen.push(s);
        chosen.extend(
            sample(rng, m - 1, negatives)
                .into_iter()
                .map(|k| if k >= s { k + 1 } else { k }),
        );
        logits.clear();
        logits.extend(chosen.iter().map(|&j| dot(q, &bank.centroids[j]) / bank.phi[j]));
        let (l, coef) = nce_row(&logits);
        out.components[i] = l;
        out.loss += l * inv_n;
        for (&j, &c) in chosen.iter().zip(&coef) {
            axpy(c * inv_n / bank.phi[j], &bank.centroids[j], &mut out.grads[i]);
        }
    }
    Ok(out)
}

const BANK_HEADER: &str = "# c3dino-bank v1";

/// One text header line, then centroids and concentrations as `f64` LE.
pub fn write_bank<S: Scalar>(bank: &PrototypeBank<S>, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "{BANK_HEADER} M={} D={} eps={} phi_min={} phi_max={}",
        bank.len(),
        bank.dim(),
        bank.eps,
        bank.phi_min,
        bank.phi_max
    )?;
    for c in &bank.centroids {
        for &x in c {
            w.write_all(&x.to_f64_lossy().to_le_bytes())?;
        }
    }
    for &p in &bank.phi {
        w.write_all(&p.to_f64_lossy().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_bank(path: &Path) -> Result<PrototypeBank<f64>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let bad = || Error::Format(format!("bad bank header `{}`", header.trim()));
    let rest = header.trim().strip_prefix(BANK_HEADER).ok_or_else(bad)?;
    let mut fields = std::collections::HashMap::new();
    for kv in rest.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(bad)?;
        fields.insert(k, v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(bad);
    let m: usize = get("M")?.parse().map_err(|_| bad())?;
    let d: usize = get("D")?.parse().map_err(|_| bad())?;
    let eps: f64 = get("eps")?.parse().map_err(|_| bad())?;
    let phi_min: f64 = get("phi_min")?.parse().map_err(|_| bad())?;
    let phi_max: f64 = get("phi_max")?.parse().map_err(|_| bad())?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != (m * d + m) * 8 {
        return Err(Error::Format("bank payload length".into()));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let centroids = vals[..m * d].chunks(d.max(1)).take(m).map(<[f64]>::to_vec).collect();
    let mut bank = PrototypeBank::from_parts(centroids, vals[m * d..].to_vec());
    bank.eps = eps;
    bank.phi_min = phi_min;
    bank.phi_max = phi_max;
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_grad, max_rel_err};
    use rand_distr::{Distribution, StandardNormal};

    fn random_units(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = stream(seed, Stream::Init, 5);
        (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
                l2_normalize(&v).unwrap()
            })
            .collect()
    }

    #[test]
    fn concentration_examples() {
        let phi = raw_concentration(2.0, 2, 10.0);
        assert!((phi - 2.0 / (2.0 * 12f64.ln())).abs() < 1e-15);
        assert!((phi - 0.4024).abs() < 1e-4);
        assert_eq!(raw_concentration(4.0, 2, 10.0), 2.0 * phi);

        let mut bank = PrototypeBank::from_parts(vec![vec![1.0, 0.0]], vec![1.0]);
        bank.sizes = vec![3];
        bank.dist_sums = vec![0.0];
        assert_eq!(concentration(&bank, 0), 0.05);
        bank.dist_sums = vec![100.0];
        assert_eq!(concentration(&bank, 0), 1.0);
    }

    #[test]
    fn proto_nce_examples() {
        let bank = PrototypeBank::from_parts(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![1.0, 1.0]);
        let mut r = stream(0, Stream::ProtoSample, 0);
        let out = proto_nce(&[vec![1.0, 0.0]], &[0], &bank, 1, &mut r).unwrap();
        let e = 1f64.exp();
        let want = -(e / (e + 1.0 / e)).ln();
        assert!((out.loss - want).abs() < 1e-14);
        assert!((out.loss - 0.1269).abs() < 1e-4);

        // Anchor orthogonal to every prototype.
        let cents: Vec<Vec<f64>> = (0..6)
            .map(|j| {
                let mut c = vec![0.0; 7];
                c[j] = 1.0;
                c
            })
            .collect();
        let bank = PrototypeBank::from_parts(cents, vec![0.3; 6]);
        let mut q = vec![0.0; 7];
        q[6] = 1.0;
        for r_neg in 1..6 {
            let out = proto_nce(&[q.clone()], &[2], &bank, r_neg, &mut r).unwrap();
            assert!((out.loss - ((r_neg + 1) as f64).ln()).abs() < 1e-12);
        }
        assert!(proto_nce(&[q.clone()], &[2], &bank, 6, &mut r).is_err());
        let empty = PrototypeBank::<f64>::from_parts(vec![], vec![]);
        assert!(matches!(
            proto_nce(&[q], &[0], &empty, 0, &mut r),
            Err(Error::BankNotFitted)
        ));
    }

    #[test]
    fn proto_never_samples_positive() {
        let pts = random_units(40, 3, 1);
        let bank = kmeans_fit(
            &pts,
            &KMeansConfig {
                clusters: 8,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        // With positive at logit 0 and every negative far, the positive
        // probability is measurable: make the positive distinguishable by
        // checking that no sampled set contains a duplicate of it.
        let mut r = stream(3, Stream::ProtoSample, 0);
        for s in 0..8 {
            for _ in 0..50 {
                let picks: Vec<usize> = sample(&mut r, 7, 7)
                    .into_iter()
                    .map(|k| if k >= s { k + 1 } else { k })
                    .collect();
                assert!(!picks.contains(&s));
                let mut sorted = picks.clone();
                sorted.sort_unstable();
                sorted.dedup();
                assert_eq!(sorted.len(), 7);
            }
        }
        let out = proto_nce(&pts[..5], &bank.assignments[..5], &bank, 7, &mut r).unwrap();
        assert!(out.loss.is_finite());
    }

    #[test]
    fn proto_grads() {
        for seed in 0..5 {
            let pts = random_units(60, 5, seed);
            let bank = kmeans_fit(
                &pts,
                &KMeansConfig {
                    clusters: 6,
                    ..Default::default()
                },
                seed,
            )
            .unwrap();
            let q = random_units(4, 5, seed + 50);
            let cl: Vec<usize> = q.iter().map(|v| bank.nearest(v)).collect();
            let mut r = stream(seed, Stream::ProtoSample, 9);
            let out = proto_nce(&q, &cl, &bank, 3, &mut r).unwrap();
            let fd = finite_diff_grad(
                |x| {
                    let v: Vec<Vec<f64>> = x.chunks(5).map(<[f64]>::to_vec).collect();
                    let mut r = stream(seed, Stream::ProtoSample, 9);
                    proto_nce(&v, &cl, &bank, 3, &mut r).unwrap().loss
                },
                &q.concat(),
                1e-6,
            );
            assert!(max_rel_err(&out.grads.concat(), &fd, 1e-8) < 1e-4);
        }
    }

    #[test]
    fn kmeans_identity_and_monotone() {
        let pts = random_units(7, 4, 2);
        let bank = kmeans_fit(
            &pts,
            &KMeansConfig {
                clusters: 7,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        assert!(bank.final_inertia() < 1e-20);
        let mut seen = bank.assignments.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());

        for seed in 0..10 {
            let pts = random_units(300, 6, seed);
            let bank = kmeans_fit(
                &pts,
                &KMeansConfig {
                    clusters: 12,
                    ..Default::default()
                },
                seed,
            )
            .unwrap();
            for w in bank.inertia_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{:?}", bank.inertia_history);
            }
            for c in &bank.centroids {
                assert!((dot(c, c) - 1.0).abs() < 1e-12);
            }
            assert_eq!(bank.sizes.iter().sum::<usize>(), 300);
            assert!(bank.phi.iter().all(|&p| (0.05..=1.0).contains(&p)));
        }
        assert!(matches!(
            kmeans_fit(
                &random_units(3, 2, 0),
                &KMeansConfig {
                    clusters: 4,
                    ..Default::default()
                },
                0
            ),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn kmeans_separates_blobs() {
        let sigma = 0.05;
        let mut r = stream(4, Stream::Init, 0);
        let centers = [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for i in 0..100 {
            let c = &centers[i % 2];
            let v: Vec<f64> = c
                .iter()
                .map(|&x| x + sigma * Distribution::<f64>::sample(&StandardNormal, &mut r))
                .collect();
            pts.push(l2_normalize(&v).unwrap());
            truth.push(i % 2);
        }
        for seed in 0..5 {
            let bank = kmeans_fit(
                &pts,
                &KMeansConfig {
                    clusters: 2,
                    ..Default::default()
                },
                seed,
            )
            .unwrap();
            let same = bank.assignments.iter().zip(&truth).filter(|(a, b)| a == b).count();
            assert!(same == 100 || same == 0);
        }
    }

    #[test]
    fn bank_round_trip() {
        let pts = random_units(50, 4, 3);
        let bank = kmeans_fit(
            &pts,
            &KMeansConfig {
                clusters: 5,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.bin");
        write_bank(&bank, &path).unwrap();
        let back = read_bank(&path).unwrap();
        assert_eq!(back.centroids, bank.centroids);
        assert_eq!(back.phi, bank.phi);
        assert_eq!(back.eps, bank.eps);
    }
}
