use crate::backend::{compute_eer, compute_min_dcf, score_trials, DcfParams, EmbeddingTable};
use crate::data::{augment_view, generate_dataset, make_trials, Dataset, TrialList};
use crate::encoder::EncoderParams;
use crate::error::Result;
use crate::rng::{derive_seed, stream, Stream};
use crate::tensor::Mat;

use super::RunConfig;

/// Training split with its augmented views, and the held-out evaluation
/// split with its probe trials.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub train: Dataset,
    pub eval: Dataset,
    pub trials: TrialList,
    /// Evaluation inputs, one per evaluation utterance.
    pub eval_inputs: Vec<Mat<f64>>,
    /// Two augmented views per training utterance.
    pub views: Vec<[Mat<f64>; 2]>,
    views_epoch: Option<u64>,
}

impl Experiment {
    /// Synthesizes the dataset described by `cfg.data`.
    pub fn generate(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        Self::from_dataset(cfg, &generate_dataset(&cfg.data)?)
    }

    /// Splits speakers, draws the probe trials and augments the evaluation
    /// utterances. All of this depends on the data seed only, so runs with
    /// different training seeds share one evaluation set.
    pub fn from_dataset(cfg: &RunConfig, ds: &Dataset) -> Result<Self> {
        let (train, eval) = ds.split_speakers(cfg.eval.holdout_speakers)?;
        let data_seed = cfg.data.seed;
        let trials = make_trials(&eval, cfg.eval.n_target, cfg.eval.n_nontarget, data_seed)?;
        let eval_inputs = eval
            .utterances
            .iter()
            .enumerate()
            .map(|(i, u)| {
                if cfg.eval.augment {
                    let mut r = stream(data_seed, Stream::EvalAugment, i as u64);
                    augment_view(&u.frames, &cfg.augment, &mut r)
                } else {
                    u.frames.clone()
                }
            })
            .collect();
        let mut exp = Self {
            train,
            eval,
            trials,
            eval_inputs,
            views: Vec::new(),
            views_epoch: None,
        };
        exp.prepare_views(cfg, 0);
        Ok(exp)
    }

    /// Makes sure `views` hold the offline augmentation used in `epoch`.
    pub fn prepare_views(&mut self, cfg: &RunConfig, epoch: u64) {
        let key = if cfg.train.regenerate_views { epoch } else { 0 };
        if self.views_epoch == Some(key) {
            return;
        }
        self.views = self
            .train
            .utterances
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let view = |v: u64| {
                    let index = (key << 32) | ((i as u64) << 1) | v;
                    let mut r = stream(cfg.seed, Stream::Augment, index);
                    augment_view(&u.frames, &cfg.augment, &mut r)
                };
                [view(0), view(1)]
            })
            .collect();
        self.views_epoch = Some(key);
    }

    pub fn train_labels(&self) -> Vec<usize> {
        self.train.speaker_ids()
    }

    /// Embeddings of the evaluation inputs.
    pub fn eval_table(&self, enc: &EncoderParams<f64>) -> Result<EmbeddingTable<f64>> {
        let ids = self.eval.utterances.iter().map(|u| u.id.clone()).collect();
        EmbeddingTable::new(ids, embed_all(enc, &self.eval_inputs)?)
    }

    /// Embeddings of the training utterances, augmented with a fixed
    /// evaluation-style draw; used to train the back-end.
    pub fn backend_train_embeddings(&self, cfg: &RunConfig, enc: &EncoderParams<f64>) -> Result<Vec<Vec<f64>>> {
        let base = derive_seed(cfg.data.seed, Stream::Backend, 0);
        let inputs: Vec<Mat<f64>> = self
            .train
            .utterances
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let mut r = stream(base, Stream::EvalAugment, i as u64);
                augment_view(&u.frames, &cfg.augment, &mut r)
            })
            .collect();
        embed_all(enc, &inputs)
    }

    /// Clean full-length training embeddings.
    pub fn clean_train_embeddings(&self, enc: &EncoderParams<f64>) -> Result<Vec<Vec<f64>>> {
        self.train.utterances.iter().map(|u| enc.embed(&u.frames)).collect()
    }

    /// `(EER, minDCF)` of the probe trials under CDS scoring.
    pub fn evaluate(&self, enc: &EncoderParams<f64>) -> Result<(f64, f64)> {
        let scores = score_trials(&self.eval_table(enc)?, &self.trials)?;
        Ok((
            compute_eer(&scores)?.0,
            compute_min_dcf(&scores, DcfParams::default())?.0,
        ))
    }
}

pub fn embed_all(enc: &EncoderParams<f64>, inputs: &[Mat<f64>]) -> Result<Vec<Vec<f64>>> {
    inputs.iter().map(|x| enc.embed(x)).collect()
}
