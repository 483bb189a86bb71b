use rand::seq::SliceRandom;

use super::checkpoint::{DinoState, TrainState};
use super::experiment::Experiment;
use super::metrics::MetricsRow;
use super::optim::{lr_at, Adam, LrSchedule};
use super::{Mode, PfnLevel, RunConfig};
use crate::cssl::{
    c3_loss, classify_components, in_batch_info_nce, kmeans_fit, moco_info_nce, pfn_compute, pfn_controlled_dropout,
    reweighted_info_nce, simclr_loss, NegativeQueue, PrototypeBank,
};
use crate::data::{crop_global, crop_local};
use crate::dino::{collapse_metrics, multicrop_loss, teacher_probs, CenterState, DinoHead};
use crate::encoder::{backward, init_params, EncoderOutput, EncoderPair};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, Stream};
use crate::tensor::{axpy, entropy, Mat};

/// Objective of one training stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stage {
    Simclr,
    /// MoCo InfoNCE against the queue.
    Moco,
    /// Re-weighted InfoNCE against the queue.
    Reweight,
    /// Re-weighted InfoNCE plus ProtoNCE.
    Proto,
    /// Multi-crop self-distillation only.
    Dino,
    /// In-batch InfoNCE with controlled false-negative dropout.
    InBatch(PfnLevel),
}

impl Stage {
    pub fn name(&self) -> String {
        match self {
            Stage::Simclr => "simclr".into(),
            Stage::Moco => "moco".into(),
            Stage::Reweight => "reweight".into(),
            Stage::Proto => "proto".into(),
            Stage::Dino => "dino".into(),
            Stage::InBatch(PfnLevel::Absolute(x)) if *x == 0.0 => "supcon".into(),
            Stage::InBatch(l) => format!("inbatch[{l}]"),
        }
    }

    fn uses_queue(&self) -> bool {
        matches!(self, Stage::Moco | Stage::Reweight | Stage::Proto)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageSpec {
    pub stage: Stage,
    pub epochs: usize,
    /// Weight of an added DINO term (multi-task variant). `Some(0.0)` still
    /// evaluates the term.
    pub dino_weight: Option<f64>,
}

impl StageSpec {
    pub fn new(stage: Stage, epochs: usize) -> Self {
        Self {
            stage,
            epochs,
            dino_weight: None,
        }
    }

    fn dino_weight(&self) -> Option<f64> {
        match self.stage {
            Stage::Dino => Some(1.0),
            _ => self.dino_weight,
        }
    }
}

impl TrainState {
    /// Freshly initialized encoders, empty queue, no DINO branch.
    pub fn fresh(cfg: &RunConfig) -> Result<Self> {
        let student = init_params(&cfg.arch, derive_seed(cfg.seed, Stream::Init, 0))?;
        let o = &cfg.train.optim;
        let mut adam = Adam::new(student.values.len(), o.beta1, o.beta2, o.eps);
        adam.weight_decay = o.weight_decay;
        Ok(Self {
            mode: cfg.mode,
            pair: EncoderPair::new(student, cfg.train.momentum),
            adam,
            dino: None,
            queue: NegativeQueue::new(cfg.train.queue_size)?,
            step: 0,
            epoch: 0,
            phase_step: 0,
            phase_steps: 0,
        })
    }

    /// Starts a learning-rate phase of `steps` optimizer steps; optionally
    /// clears the optimizer moments.
    pub fn start_phase(&mut self, steps: u64, reset_optimizer: bool) {
        self.phase_step = 0;
        self.phase_steps = steps;
        if reset_optimizer {
            let n = self.adam.m.len();
            self.adam = Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
                ..self.adam.clone()
            };
            if let Some(d) = &mut self.dino {
                let n = d.adam.m.len();
                d.adam = Adam {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                    t: 0,
                    ..d.adam.clone()
                };
            }
        }
    }

    /// Replaces the DINO branch with a freshly initialized head pair and a
    /// zero center.
    pub fn reset_dino(&mut self, cfg: &RunConfig) -> Result<()> {
        let d = &cfg.train.dino;
        let seed = derive_seed(cfg.seed, Stream::HeadInit, self.epoch);
        let student = DinoHead::new(cfg.arch.embed_dim, d.head_k, seed)?;
        let o = &cfg.train.optim;
        self.dino = Some(DinoState {
            teacher: student.clone(),
            adam: Adam::new(student.values.len(), o.beta1, o.beta2, o.eps),
            student,
            center: CenterState::new(d.head_k, d.center_momentum),
        });
        Ok(())
    }

    fn check_compatible(&self, cfg: &RunConfig) -> Result<()> {
        if self.pair.student.arch != cfg.arch {
            return Err(Error::ConfigMismatch(
                "checkpoint architecture differs from config".into(),
            ));
        }
        if self.queue.capacity() != cfg.train.queue_size {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint queue holds {} keys, config asks for {}",
                self.queue.capacity(),
                cfg.train.queue_size
            )));
        }
        if let Some(d) = &self.dino {
            if d.student.k != cfg.train.dino.head_k {
                return Err(Error::ConfigMismatch(format!(
                    "checkpoint head has {} outputs, config asks for {}",
                    d.student.k, cfg.train.dino.head_k
                )));
            }
        }
        Ok(())
    }
}

/// Utterance indices for every step of `epoch`, drawn from consecutive
/// shuffles of the training set.
pub(crate) fn epoch_batches(seed: u64, epoch: u64, n_utts: usize, batch: usize, steps: usize) -> Vec<Vec<usize>> {
    let need = batch * steps;
    let mut order = Vec::with_capacity(need);
    let mut pass = 0u64;
    while order.len() < need {
        let mut perm: Vec<usize> = (0..n_utts).collect();
        perm.shuffle(&mut stream(seed, Stream::Shuffle, (epoch << 20) | pass));
        order.extend(perm);
        pass += 1;
    }
    order.truncate(need);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Teacher embeddings of random global crops, enough to fill the queue.
fn fill_queue(cfg: &RunConfig, exp: &Experiment, state: &mut TrainState) -> Result<()> {
    let mut r = stream(cfg.seed, Stream::QueueFill, state.epoch);
    let n = exp.train.len();
    let mut keys = Vec::with_capacity(state.queue.capacity());
    let mut labels = Vec::with_capacity(state.queue.capacity());
    for _ in 0..state.queue.capacity() {
        let u = rand::Rng::random_range(&mut r, 0..n);
        let crop = crop_global(&exp.views[u][1], &cfg.crop, &mut r)?;
        keys.push(state.pair.teacher.embed(&crop)?);
        labels.push(exp.train.utterances[u].speaker_id);
    }
    state.queue.push_batch(&keys, Some(&labels), state.step)
}

/// Prototype bank from teacher embeddings of clean training utterances.
pub fn fit_bank(cfg: &RunConfig, exp: &Experiment, state: &TrainState) -> Result<PrototypeBank<f64>> {
    let emb = exp.clean_train_embeddings(&state.pair.teacher)?;
    kmeans_fit(
        &emb,
        &cfg.train.kmeans,
        derive_seed(cfg.seed, Stream::KMeans, state.epoch),
    )
}

#[derive(Default)]
struct EpochAcc {
    steps: u64,
    lr: f64,
    loss: f64,
    infonce: Option<f64>,
    reweighted: Option<f64>,
    proto: Option<f64>,
    dino: Option<f64>,
    fn_fraction: Option<f64>,
    pfn: Option<f64>,
    retained_pfn: Option<f64>,
    teacher_entropy: Option<f64>,
    batch_mean_entropy: Option<f64>,
    batch_mean_entropy_min: Option<f64>,
    probs_sum: Vec<f64>,
    probs_rows: usize,
}

fn add(slot: &mut Option<f64>, v: f64) {
    *slot = Some(slot.unwrap_or(0.0) + v);
}

impl EpochAcc {
    fn mean(&self, v: Option<f64>) -> Option<f64> {
        v.map(|x| x / self.steps as f64)
    }
}

fn forward_all(enc: &crate::encoder::EncoderParams<f64>, xs: &[Mat<f64>]) -> Result<Vec<EncoderOutput<f64>>> {
    xs.iter().map(|x| enc.forward(x)).collect()
}

/// Runs `spec.epochs` epochs of one stage and returns the updated state and
/// one metrics row per epoch. A zero-epoch stage returns the state as is.
pub fn train_stage(
    cfg: &RunConfig,
    exp: &mut Experiment,
    spec: StageSpec,
    mut state: TrainState,
) -> Result<(TrainState, Vec<MetricsRow>)> {
    state.check_compatible(cfg)?;
    if spec.epochs == 0 {
        return Ok((state, Vec::new()));
    }
    let spe = cfg.steps_per_epoch();
    if state.phase_steps == 0 {
        state.start_phase((spe * spec.epochs) as u64, false);
    }
    if spec.dino_weight().is_some() && state.dino.is_none() {
        state.reset_dino(cfg)?;
    }
    if spec.stage.uses_queue() && state.queue.is_empty() {
        fill_queue(cfg, exp, &mut state)?;
    }
    let schedule = LrSchedule::over_steps(cfg.train.optim.lr_start, cfg.train.optim.lr_end, state.phase_steps);
    let mut rows = Vec::with_capacity(spec.epochs);
    for _ in 0..spec.epochs {
        exp.prepare_views(cfg, state.epoch);
        let bank = match spec.stage {
            Stage::Proto => Some(fit_bank(cfg, exp, &state)?),
            _ => None,
        };
        let batches = epoch_batches(cfg.seed, state.epoch, exp.train.len(), cfg.train.batch_size, spe);
        let mut acc = EpochAcc::default();
        for batch in &batches {
            let lr = lr_at(&schedule, state.phase_step)?;
            train_step(cfg, exp, spec, &mut state, batch, bank.as_ref(), lr, &mut acc)?;
            acc.lr = lr;
        }
        let mut row = MetricsRow {
            epoch: state.epoch,
            stage: spec.stage.name() + if spec.dino_weight.is_some() { "+dino" } else { "" },
            steps: acc.steps,
            lr: acc.lr,
            loss: acc.loss / acc.steps as f64,
            infonce: acc.mean(acc.infonce),
            reweighted: acc.mean(acc.reweighted),
            proto: acc.mean(acc.proto),
            dino: acc.mean(acc.dino),
            fn_fraction: acc.mean(acc.fn_fraction),
            pfn: acc.mean(acc.pfn),
            retained_pfn: acc.mean(acc.retained_pfn),
            teacher_entropy: acc.mean(acc.teacher_entropy),
            batch_mean_entropy: acc.mean(acc.batch_mean_entropy),
            batch_mean_entropy_min: acc.batch_mean_entropy_min,
            ..Default::default()
        };
        if spec.stage.uses_queue() {
            row.queue_age = Some(state.queue.mean_age(state.step));
        }
        if let Some(b) = &bank {
            let n = b.phi.len() as f64;
            row.phi_mean = Some(b.phi.iter().sum::<f64>() / n);
            row.phi_min = b.phi.iter().copied().reduce(f64::min);
            row.phi_max = b.phi.iter().copied().reduce(f64::max);
        }
        if acc.probs_rows > 0 {
            let inv = 1.0 / acc.probs_rows as f64;
            let mean: Vec<f64> = acc.probs_sum.iter().map(|p| p * inv).collect();
            row.epoch_mean_entropy = Some(entropy(&mean));
        }
        if let (Some(d), Some(_)) = (&state.dino, spec.dino_weight()) {
            row.center_std = Some(d.center.spread());
        }
        if cfg.eval.probe_every_epoch {
            row.probe_eer = Some(exp.evaluate(&state.pair.teacher)?.0);
        }
        log::info!(
            "epoch {} stage {} loss {:.5} probe_eer {}",
            row.epoch,
            row.stage,
            row.loss,
            row.probe_eer.map_or("-".into(), |e| format!("{:.4}", e))
        );
        state.epoch += 1;
        rows.push(row);
    }
    Ok((state, rows))
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    cfg: &RunConfig,
    exp: &Experiment,
    spec: StageSpec,
    state: &mut TrainState,
    batch: &[usize],
    bank: Option<&PrototypeBank<f64>>,
    lr: f64,
    acc: &mut EpochAcc,
) -> Result<()> {
    let t = &cfg.train;
    let n = batch.len();
    let labels: Vec<usize> = batch.iter().map(|&u| exp.train.utterances[u].speaker_id).collect();
    let mut crop_rng = stream(cfg.seed, Stream::Crop, state.step);
    let mut g1 = Vec::with_capacity(n);
    let mut g2 = Vec::with_capacity(n);
    for &u in batch {
        g1.push(crop_global(&exp.views[u][0], &cfg.crop, &mut crop_rng)?);
        g2.push(crop_global(&exp.views[u][1], &cfg.crop, &mut crop_rng)?);
    }
    let dino_w = spec.dino_weight();
    let locals = cfg.crop.locals;
    let mut local_crops = Vec::new();
    if dino_w.is_some() {
        let mut r = stream(cfg.seed, Stream::LocalCrop, state.step);
        for i in 0..n {
            for j in 0..locals {
                let src = if j % 2 == 0 { &g1[i] } else { &g2[i] };
                local_crops.push(crop_local(src, &cfg.crop, &mut r)?);
            }
        }
    }

    let student = &state.pair.student;
    let teacher = &state.pair.teacher;
    let mut s1 = forward_all(student, &g1)?;
    let need_s2 = matches!(spec.stage, Stage::Simclr) || dino_w.is_some();
    let mut s2 = if need_s2 {
        forward_all(student, &g2)?
    } else {
        Vec::new()
    };
    let mut sl = forward_all(student, &local_crops)?;
    let keys: Vec<Vec<f64>> = if matches!(spec.stage, Stage::Simclr) {
        Vec::new()
    } else {
        g2.iter().map(|x| teacher.embed(x)).collect::<Result<_>>()?
    };
    let q: Vec<Vec<f64>> = s1.iter().map(|o| o.embedding.clone()).collect();
    let dim = cfg.arch.embed_dim;
    let mut up1 = vec![vec![0.0; dim]; n];
    let mut up2 = vec![vec![0.0; dim]; s2.len()];
    let mut upl = vec![vec![0.0; dim]; sl.len()];
    let mut loss = 0.0;
    let tau = t.tau;

    if spec.stage.uses_queue() {
        let qk = state.queue.keys();
        let queue_labels: std::collections::HashSet<usize> = state.queue.labels().iter().flatten().copied().collect();
        let hits = labels.iter().filter(|l| queue_labels.contains(l)).count();
        add(&mut acc.pfn, hits as f64 / n as f64);
        match spec.stage {
            Stage::Moco => {
                let out = moco_info_nce(&q, &keys, qk, tau)?;
                let part = classify_components(&q, &keys, qk, &t.reweight);
                add(&mut acc.fn_fraction, part.fn_.len() as f64 / n as f64);
                add(&mut acc.infonce, out.loss);
                loss += out.loss;
                up1 = out.grads;
            }
            Stage::Reweight => {
                let (out, part) = reweighted_info_nce(&q, &keys, qk, &t.reweight, tau)?;
                add(&mut acc.fn_fraction, part.fn_.len() as f64 / n as f64);
                add(&mut acc.infonce, out.components.iter().sum::<f64>() / n as f64);
                add(&mut acc.reweighted, out.loss);
                loss += out.loss;
                up1 = out.grads;
            }
            Stage::Proto => {
                let bank = bank.ok_or(Error::BankNotFitted)?;
                let clusters: Vec<usize> = batch.iter().map(|&u| bank.assignments[u]).collect();
                let r_neg = if t.proto_negatives == 0 {
                    (bank.len() - 1).min(64)
                } else {
                    t.proto_negatives
                };
                let mut r = stream(cfg.seed, Stream::ProtoSample, state.step);
                let out = c3_loss(&q, &keys, qk, bank, &clusters, &t.reweight, tau, t.alpha, r_neg, &mut r)?;
                add(&mut acc.fn_fraction, out.partition.fn_.len() as f64 / n as f64);
                add(&mut acc.reweighted, out.reweighted);
                add(&mut acc.proto, out.proto);
                loss += out.loss;
                up1 = out.grads;
            }
            _ => unreachable!(),
        }
    }
    match spec.stage {
        Stage::Simclr => {
            let views: Vec<Vec<f64>> = q
                .iter()
                .cloned()
                .chain(s2.iter().map(|o| o.embedding.clone()))
                .collect();
            let out = simclr_loss(&views, tau)?;
            add(&mut acc.infonce, out.loss);
            loss += out.loss;
            let mut g = out.grads;
            up2 = g.split_off(n);
            up1 = g;
        }
        Stage::InBatch(level) => {
            let natural = pfn_compute(&labels);
            let mut r = stream(cfg.seed, Stream::PfnDropout, state.step);
            let retained = match level {
                PfnLevel::Natural => (0..n).collect(),
                _ => pfn_controlled_dropout(&labels, level.target(natural), &mut r)?,
            };
            let mask = crate::cssl::false_negative_mask(&labels);
            add(&mut acc.pfn, natural);
            add(&mut acc.retained_pfn, crate::cssl::retained_pfn(&mask, &retained));
            let out = in_batch_info_nce(&q, &keys, tau, &retained)?;
            add(&mut acc.infonce, out.loss);
            loss += out.loss;
            up1 = out.grads;
        }
        _ => {}
    }

    let mut head_grads = Vec::new();
    let mut teacher_logits = Vec::new();
    if let Some(w) = dino_w {
        let d = state.dino.as_ref().expect("dino branch initialized");
        let t1: Vec<Vec<f64>> = g1.iter().map(|x| teacher.embed(x)).collect::<Result<_>>()?;
        let t2: &[Vec<f64>] = if keys.is_empty() {
            &g2.iter().map(|x| teacher.embed(x)).collect::<Result<Vec<_>>>()?
        } else {
            &keys
        };
        head_grads = vec![0.0; d.student.values.len()];
        let scale = w / n as f64;
        let mut dino_loss = 0.0;
        let temps = &t.dino.temps;
        let k = t.dino.head_k;
        if acc.probs_sum.len() != k {
            acc.probs_sum = vec![0.0; k];
        }
        let mut batch_probs = Vec::with_capacity(2 * n);
        for i in 0..n {
            let tl = vec![d.teacher.logits(&t1[i]), d.teacher.logits(&t2[i])];
            let mut embs: Vec<&[f64]> = vec![&s1[i].embedding, &s2[i].embedding];
            embs.extend(sl[i * locals..(i + 1) * locals].iter().map(|o| o.embedding.as_slice()));
            let sv: Vec<Vec<f64>> = embs.iter().map(|e| d.student.logits(e)).collect();
            let mc = multicrop_loss(&tl, &sv, &d.center.center, temps, locals)?;
            dino_loss += mc.loss / n as f64;
            for (v, g) in mc.grads.iter().enumerate() {
                let g: Vec<f64> = g.iter().map(|x| x * scale).collect();
                let ge = d.student.backward(embs[v], &g, &mut head_grads);
                let target = match v {
                    0 => &mut up1[i],
                    1 => &mut up2[i],
                    _ => &mut upl[i * locals + v - 2],
                };
                axpy(1.0, &ge, target);
            }
            for x in &tl {
                batch_probs.push(teacher_probs(x, &d.center.center, temps.teacher)?);
            }
            teacher_logits.extend(tl);
        }
        let (row_h, mean_h) = collapse_metrics(&batch_probs);
        add(&mut acc.teacher_entropy, row_h);
        add(&mut acc.batch_mean_entropy, mean_h);
        acc.batch_mean_entropy_min = Some(acc.batch_mean_entropy_min.map_or(mean_h, |m: f64| m.min(mean_h)));
        for p in &batch_probs {
            axpy(1.0, p, &mut acc.probs_sum);
        }
        acc.probs_rows += batch_probs.len();
        add(&mut acc.dino, dino_loss);
        loss += w * dino_loss;
    }
    if !loss.is_finite() {
        return Err(Error::InvalidConfig(format!("non-finite loss at step {}", state.step)));
    }

    let mut grads = vec![0.0; state.pair.student.values.len()];
    let ups = up1.iter().chain(&up2).chain(&upl);
    let outs = s1.iter_mut().chain(s2.iter_mut()).chain(sl.iter_mut());
    for (o, u) in outs.zip(ups) {
        if u.iter().all(|&x| x == 0.0) {
            continue;
        }
        let g = backward(&mut o.tape, u)?;
        axpy(1.0, &g, &mut grads);
    }
    state.adam.step(&mut state.pair.student.values, &grads, lr)?;
    let hidden: Vec<Vec<f64>> = s1.into_iter().map(|o| o.hidden).collect();
    state.pair.student.update_running_stats(&hidden);
    state.pair.ema_update()?;
    if let (Some(d), Some(_)) = (state.dino.as_mut(), dino_w) {
        d.adam.step(&mut d.student.values, &head_grads, lr)?;
        d.teacher.ema_from(&d.student, state.pair.momentum)?;
        if t.dino.centering {
            d.center.update(&teacher_logits)?;
        }
    }
    if spec.stage.uses_queue() {
        state.queue.push_batch(&keys, Some(&labels), state.step)?;
    }
    acc.loss += loss;
    acc.steps += 1;
    state.step += 1;
    state.phase_step += 1;
    Ok(())
}

/// Stages of `cfg.mode` in order; the flag marks a stage that starts a
/// fresh learning-rate phase and DINO head.
pub fn stage_plan(cfg: &RunConfig) -> Vec<(StageSpec, bool)> {
    let s = &cfg.train.stages;
    let c3 = |w: Option<f64>| {
        vec![
            StageSpec {
                stage: Stage::Moco,
                epochs: s.moco,
                dino_weight: w,
            },
            StageSpec {
                stage: Stage::Reweight,
                epochs: s.reweight,
                dino_weight: w,
            },
            StageSpec {
                stage: Stage::Proto,
                epochs: s.proto,
                dino_weight: w,
            },
        ]
    };
    let plain = |specs: Vec<StageSpec>| specs.into_iter().map(|x| (x, false)).collect();
    match cfg.mode {
        Mode::Simclr => plain(vec![StageSpec::new(Stage::Simclr, s.moco)]),
        Mode::Moco => plain(vec![StageSpec::new(Stage::Moco, s.moco)]),
        Mode::C3Moco => plain(c3(None)),
        Mode::C3Dino1 => plain(c3(Some(cfg.train.beta))),
        Mode::C3Dino2 => {
            let mut v: Vec<(StageSpec, bool)> = plain(c3(None));
            v.push((StageSpec::new(Stage::Dino, s.dino), true));
            v
        }
        Mode::Dino => plain(vec![StageSpec::new(Stage::Dino, s.dino_baseline_epochs())]),
        Mode::SupconOracle => plain(vec![StageSpec::new(Stage::InBatch(PfnLevel::Absolute(0.0)), s.moco)]),
        Mode::PfnSweep => Vec::new(),
    }
}
