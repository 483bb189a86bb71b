use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::FrameMatrix;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Mat;

/// Parameters of the synthetic corpus.
///
/// Frames follow `x_t = A z + s + e_t` with a seeded mixing matrix `A`
/// (`feat_dim x latent_dim`, entries `N(0, 1/latent_dim)`), a speaker
/// latent `z ~ N(0, I)`, a per-utterance session offset `s ~ N(0,
/// session_std^2 I)` and frame noise `e_t ~ N(0, frame_std^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub speakers: usize,
    pub utts_per_speaker: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub feat_dim: usize,
    pub latent_dim: usize,
    pub session_std: f64,
    pub frame_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            speakers: 64,
            utts_per_speaker: 40,
            t_min: 80,
            t_max: 120,
            feat_dim: 20,
            latent_dim: 8,
            session_std: 0.2,
            frame_std: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("speakers", self.speakers),
            ("utts_per_speaker", self.utts_per_speaker),
            ("t_min", self.t_min),
            ("feat_dim", self.feat_dim),
            ("latent_dim", self.latent_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.t_max < self.t_min {
            return Err(Error::InvalidConfig("t_max < t_min".into()));
        }
        if !(self.session_std >= 0.0 && self.frame_std >= 0.0) {
            return Err(Error::InvalidConfig("noise scales must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerLatent {
    pub id: usize,
    pub latent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: usize,
    pub frames: FrameMatrix,
    /// Session offset; empty when loaded from disk.
    pub session: Vec<f64>,
}

impl Utterance {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feat_dim: usize,
    pub utterances: Vec<Utterance>,
    /// Generation-time ground truth; absent when loaded from disk.
    pub speakers: Vec<SpeakerLatent>,
    pub mixing: Option<Mat<f64>>,
}

pub fn utterance_id(speaker: usize, index: usize) -> String {
    format!("spk{speaker:03}-utt{index:03}")
}

fn normal_vec(rng: &mut rng::Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect()
}

/// Frames are rounded to `f32` precision so the binary file format
/// round-trips exactly.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (f, d) = (cfg.feat_dim, cfg.latent_dim);
    let mut mix_rng = rng::stream(cfg.seed, Stream::Mixing, 0);
    let mixing = Mat::from_vec(f, d, normal_vec(&mut mix_rng, f * d, 1.0 / (d as f64).sqrt()))?;

    let speakers: Vec<SpeakerLatent> = (0..cfg.speakers)
        .map(|id| {
            let mut r = rng::stream(cfg.seed, Stream::Speaker, id as u64);
            SpeakerLatent {
                id,
                latent: normal_vec(&mut r, d, 1.0),
            }
        })
        .collect();

    let mut utterances = Vec::with_capacity(cfg.speakers * cfg.utts_per_speaker);
    for spk in &speakers {
        let center: Vec<f64> = (0..f).map(|i| crate::tensor::dot(mixing.row(i), &spk.latent)).collect();
        for u in 0..cfg.utts_per_speaker {
            let flat_id = (spk.id * cfg.utts_per_speaker + u) as u64;
            let mut r = rng::stream(cfg.seed, Stream::Utterance, flat_id);
            let t = rand::Rng::random_range(&mut r, cfg.t_min..=cfg.t_max);
            let session = normal_vec(&mut r, f, cfg.session_std);
            let mut data = Vec::with_capacity(t * f);
            for _ in 0..t {
                for i in 0..f {
                    let eps: f64 = StandardNormal.sample(&mut r);
                    let v = center[i] + session[i] + cfg.frame_std * eps;
                    data.push(v as f32 as f64);
                }
            }
            utterances.push(Utterance {
                id: utterance_id(spk.id, u),
                speaker_id: spk.id,
                frames: Mat::from_vec(t, f, data)?,
                session,
            });
        }
    }
    Ok(Dataset {
        feat_dim: f,
        utterances,
        speakers,
        mixing: Some(mixing),
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn speaker_ids(&self) -> Vec<usize> {
        self.utterances.iter().map(|u| u.speaker_id).collect()
    }

    pub fn num_speakers(&self) -> usize {
        let mut ids = self.speaker_ids();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.utterances.iter().position(|u| u.id == id)
    }

    /// Splits off the utterances of the `holdout` highest speaker ids.
    pub fn split_speakers(&self, holdout: usize) -> Result<(Dataset, Dataset)> {
        let mut ids = self.speaker_ids();
        ids.sort_unstable();
        ids.dedup();
        if holdout == 0 || holdout >= ids.len() {
            return Err(Error::InvalidConfig(format!(
                "cannot hold out {holdout} of {} speakers",
                ids.len()
            )));
        }
        let cut = ids[ids.len() - holdout];
        let pick = |keep: &dyn Fn(usize) -> bool| Dataset {
            feat_dim: self.feat_dim,
            utterances: self.utterances.iter().filter(|u| keep(u.speaker_id)).cloned().collect(),
            speakers: self.speakers.iter().filter(|s| keep(s.id)).cloned().collect(),
            mixing: self.mixing.clone(),
        };
        Ok((pick(&|s| s < cut), pick(&|s| s >= cut)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(speakers: usize, utts: usize, t: usize) -> SynthConfig {
        SynthConfig {
            speakers,
            utts_per_speaker: utts,
            t_min: t,
            t_max: t,
            feat_dim: 8,
            latent_dim: 3,
            ..Default::default()
        }
    }

    #[test]
    fn shapes() {
        let ds = generate_dataset(&small(2, 1, 10)).unwrap();
        assert_eq!(ds.len(), 2);
        for u in &ds.utterances {
            assert_eq!((u.frames.rows(), u.frames.cols()), (10, 8));
        }
        assert_eq!(ds.speaker_ids(), vec![0, 1]);
    }

    #[test]
    fn deterministic() {
        let cfg = small(3, 4, 12);
        assert_eq!(generate_dataset(&cfg).unwrap(), generate_dataset(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate_dataset(&cfg).unwrap(), generate_dataset(&other).unwrap());
    }

    #[test]
    fn noise_free_frames_equal_speaker_center() {
        let cfg = SynthConfig {
            session_std: 0.0,
            frame_std: 0.0,
            ..small(2, 3, 6)
        };
        let ds = generate_dataset(&cfg).unwrap();
        let a = ds.mixing.as_ref().unwrap();
        for u in &ds.utterances {
            let z = &ds.speakers[u.speaker_id].latent;
            for row in u.frames.iter_rows() {
                for (i, &v) in row.iter().enumerate() {
                    let expect = crate::tensor::dot(a.row(i), z) as f32 as f64;
                    assert_eq!(v, expect);
                }
            }
        }
    }

    #[test]
    fn lengths_within_range_and_validation() {
        let cfg = SynthConfig {
            t_min: 5,
            t_max: 9,
            ..small(4, 5, 5)
        };
        let ds = generate_dataset(&cfg).unwrap();
        assert!(ds.utterances.iter().all(|u| (5..=9).contains(&u.len())));
        let bad = SynthConfig { speakers: 0, ..cfg };
        assert!(matches!(generate_dataset(&bad), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn split_is_speaker_disjoint() {
        let ds = generate_dataset(&small(5, 2, 4)).unwrap();
        let (train, eval) = ds.split_speakers(2).unwrap();
        assert_eq!(train.num_speakers(), 3);
        assert_eq!(eval.num_speakers(), 2);
        assert_eq!(train.len() + eval.len(), ds.len());
        assert!(ds.split_speakers(5).is_err());
    }
}
