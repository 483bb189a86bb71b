//! Two-stage view augmentation: a random channel (smoothing FIR along time,
//! standing in for reverberation) followed by additive noise of one of three
//! types at a tabulated SNR.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::FrameMatrix;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseType {
    /// White noise.
    Noise,
    /// Temporally smoothed (low-pass) noise.
    Music,
    /// Burst-gated noise.
    Babble,
}

impl NoiseType {
    pub const ALL: [NoiseType; 3] = [NoiseType::Noise, NoiseType::Music, NoiseType::Babble];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationPolicy {
    pub channel_prob: f64,
    /// Selection probabilities for noise, music and babble.
    pub noise_type_probs: [f64; 3],
    pub snr_noise: Vec<f64>,
    pub snr_music: Vec<f64>,
    pub snr_babble: Vec<f64>,
    /// Global strength; 0 disables augmentation, 1 applies the tabulated SNRs.
    pub severity: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            channel_prob: 0.8,
            noise_type_probs: [1.0 / 3.0; 3],
            snr_noise: vec![0.0, 5.0, 10.0, 15.0],
            snr_music: vec![5.0, 8.0, 10.0, 15.0],
            snr_babble: vec![13.0, 15.0, 17.0, 20.0],
            severity: 1.0,
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.channel_prob) || !self.noise_type_probs.iter().all(|&p| unit(p)) {
            return Err(Error::InvalidConfig("probabilities must lie in [0, 1]".into()));
        }
        if self.noise_type_probs.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidConfig("noise type probabilities sum to zero".into()));
        }
        if self.snr_noise.is_empty() || self.snr_music.is_empty() || self.snr_babble.is_empty() {
            return Err(Error::InvalidConfig("SNR tables must be non-empty".into()));
        }
        if !(self.severity >= 0.0) {
            return Err(Error::InvalidConfig("severity must be non-negative".into()));
        }
        Ok(())
    }

    pub fn snr_table(&self, kind: NoiseType) -> &[f64] {
        match kind {
            NoiseType::Noise => &self.snr_noise,
            NoiseType::Music => &self.snr_music,
            NoiseType::Babble => &self.snr_babble,
        }
    }
}

/// What one augmentation call did.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentRecord {
    pub channel_taps: Option<Vec<f64>>,
    pub noise: Option<(NoiseType, f64)>,
    /// Mean power of the additive stage's input and of the added noise.
    pub signal_power: f64,
    pub noise_power: f64,
}

pub fn augment_view(frames: &FrameMatrix, policy: &AugmentationPolicy, rng: &mut rng::Rng) -> FrameMatrix {
    augment_view_recorded(frames, policy, rng).0
}

pub fn augment_view_recorded(
    frames: &FrameMatrix,
    policy: &AugmentationPolicy,
    rng: &mut rng::Rng,
) -> (FrameMatrix, AugmentRecord) {
    let mut record = AugmentRecord {
        channel_taps: None,
        noise: None,
        signal_power: 0.0,
        noise_power: 0.0,
    };
    if policy.severity == 0.0 || frames.rows() == 0 {
        return (frames.clone(), record);
    }

    // Stage 1: channel.
    let mut out = frames.clone();
    if rng.random::<f64>() < policy.channel_prob {
        let len = rng.random_range(3..=7usize);
        let mut taps: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..1.0)).collect();
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|w| *w /= sum);
        let filtered = causal_fir(frames, &taps);
        let mix = policy.severity.min(1.0);
        for (o, &f) in out.data_mut().iter_mut().zip(filtered.data()) {
            *o = (1.0 - mix) * *o + mix * f;
        }
        record.channel_taps = Some(taps);
    }

    // Stage 2: additive noise, always applied after the channel stage.
    let kind = pick_type(&policy.noise_type_probs, rng);
    let table = policy.snr_table(kind);
    let snr = table[rng.random_range(0..table.len())];
    let mut noise = raw_noise(kind, out.rows(), out.cols(), rng);
    let signal_power = out.mean_square();
    let raw_power = noise.mean_square();
    let target = signal_power / 10f64.powf(snr / 10.0) * policy.severity * policy.severity;
    if raw_power > 0.0 && target > 0.0 {
        let scale = (target / raw_power).sqrt();
        noise.data_mut().iter_mut().for_each(|v| *v *= scale);
        for (o, &n) in out.data_mut().iter_mut().zip(noise.data()) {
            *o += n;
        }
        record.noise_power = noise.mean_square();
    }
    record.signal_power = signal_power;
    record.noise = Some((kind, snr));
    (out, record)
}

fn pick_type(probs: &[f64; 3], rng: &mut rng::Rng) -> NoiseType {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (kind, &p) in NoiseType::ALL.iter().zip(probs) {
        if u < p {
            return *kind;
        }
        u -= p;
    }
    NoiseType::Babble
}

/// `y_t = sum_k w_k x_{t-k}`, replicating the first frame before the start.
fn causal_fir(x: &FrameMatrix, taps: &[f64]) -> FrameMatrix {
    let (t, f) = (x.rows(), x.cols());
    let mut y = Mat::zeros(t, f);
    for r in 0..t {
        let out = y.row_mut(r);
        for (k, &w) in taps.iter().enumerate() {
            let src = x.row(r.saturating_sub(k));
            for (o, &v) in out.iter_mut().zip(src) {
                *o += w * v;
            }
        }
    }
    y
}

fn raw_noise(kind: NoiseType, t: usize, f: usize, rng: &mut rng::Rng) -> FrameMatrix {
    let white: Vec<f64> = (0..t * f).map(|_| StandardNormal.sample(&mut *rng)).collect();
    let white = Mat::from_vec(t, f, white).expect("shape");
    match kind {
        NoiseType::Noise => white,
        NoiseType::Music => causal_fir(&white, &[0.2; 5]),
        NoiseType::Babble => {
            let mut gated = white;
            let mut r = 0;
            let mut any_on = false;
            while r < t {
                let seg = rng.random_range(4..=16usize).min(t - r);
                let on = rng.random::<bool>();
                if !on {
                    for row in r..r + seg {
                        gated.row_mut(row).iter_mut().for_each(|v| *v = 0.0);
                    }
                }
                any_on |= on;
                r += seg;
            }
            if !any_on {
                // Reinstate a burst so the noise is never silent.
                let fresh: Vec<f64> = (0..f).map(|_| StandardNormal.sample(&mut *rng)).collect();
                gated.row_mut(0).copy_from_slice(&fresh);
            }
            gated
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, SynthConfig};
    use crate::rng::{stream, Stream};

    fn utterance() -> FrameMatrix {
        let cfg = SynthConfig {
            speakers: 1,
            utts_per_speaker: 1,
            t_min: 40,
            t_max: 40,
            ..Default::default()
        };
        generate_dataset(&cfg).unwrap().utterances[0].frames.clone()
    }

    #[test]
    fn zero_severity_is_identity() {
        let x = utterance();
        let policy = AugmentationPolicy {
            severity: 0.0,
            ..Default::default()
        };
        let mut rng = stream(0, Stream::Augment, 0);
        assert_eq!(augment_view(&x, &policy, &mut rng), x);
    }

    #[test]
    fn forced_snr_is_realized() {
        let x = utterance();
        let policy = AugmentationPolicy {
            snr_noise: vec![10.0],
            snr_music: vec![10.0],
            snr_babble: vec![10.0],
            ..Default::default()
        };
        for i in 0..30 {
            let mut rng = stream(1, Stream::Augment, i);
            let (y, rec) = augment_view_recorded(&x, &policy, &mut rng);
            assert_eq!((y.rows(), y.cols()), (x.rows(), x.cols()));
            let measured = 10.0 * (rec.signal_power / rec.noise_power).log10();
            assert!((measured - 10.0).abs() < 0.1, "{measured}");
        }
    }

    #[test]
    fn channel_changes_input() {
        let x = utterance();
        let policy = AugmentationPolicy {
            channel_prob: 1.0,
            ..Default::default()
        };
        let mut rng = stream(2, Stream::Augment, 0);
        let (y, rec) = augment_view_recorded(&x, &policy, &mut rng);
        assert!(rec.channel_taps.is_some());
        assert_ne!(y, x);
    }

    #[test]
    fn all_noise_types_are_drawn() {
        let x = utterance();
        let policy = AugmentationPolicy::default();
        let mut seen = [0usize; 3];
        for i in 0..300 {
            let mut rng = stream(3, Stream::Augment, i);
            let (_, rec) = augment_view_recorded(&x, &policy, &mut rng);
            let (kind, snr) = rec.noise.unwrap();
            assert!(policy.snr_table(kind).contains(&snr));
            seen[NoiseType::ALL.iter().position(|k| *k == kind).unwrap()] += 1;
        }
        // Equal probabilities: each count near 100.
        assert!(seen.iter().all(|&c| (60..140).contains(&c)), "{seen:?}");
    }

    #[test]
    fn validation() {
        let bad = AugmentationPolicy {
            channel_prob: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentationPolicy {
            snr_music: vec![],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
