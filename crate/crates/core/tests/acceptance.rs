//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria 1, 2, 3 and 9 are exact properties and fail the test binary.
//! Criteria 4 to 8 are learning trends on synthetic data; their lines are
//! reported but do not change the exit status.

use std::time::Instant;

use c3dino::backend::{
    backend_pipeline, compute_eer, compute_min_dcf, score_trials, write_embeddings, DcfParams, ScoreSet,
};
use c3dino::cssl::{
    c3_loss, moco_info_nce, pfn_compute, proto_nce, reweighted_info_nce, simclr_loss, PrototypeBank, ReweightConfig,
};
use c3dino::dino::{multicrop_loss, update_center, CenterState, DinoHead, TempPair};
use c3dino::encoder::{backward, init_params, ArchConfig, EncoderParams};
use c3dino::rng::{stream, Stream};
use c3dino::tensor::{finite_diff_grad, l2_normalize, max_rel_err, Mat};
use c3dino::train::{
    append_metrics, checkpoint_bytes, lr_at, pfn_sweep, run_pipeline, Experiment, LrSchedule, MetricsRow, Mode,
    PfnLevel, RunConfig, TrainState,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

type Grads = (f64, Vec<Vec<f64>>);

struct Report {
    hard_failures: Vec<u32>,
}

impl Report {
    fn line(&mut self, n: u32, pass: bool, hard: bool, msg: String) {
        println!("criterion {n}: {} {msg}", if pass { "PASS" } else { "FAIL" });
        if !pass && hard {
            self.hard_failures.push(n);
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

// ---------------------------------------------------------------- gradients

fn toy_arch() -> ArchConfig {
    ArchConfig {
        input_dim: 4,
        frame_widths: vec![5, 3],
        head_hidden: 6,
        embed_dim: 4,
        ..Default::default()
    }
}

fn toy_encoder(seed: u64) -> EncoderParams<f64> {
    let mut p: EncoderParams<f64> = init_params(&toy_arch(), seed).unwrap();
    let mut r = stream(seed, Stream::Shuffle, 1);
    // Random biases, gains and shifts keep pre-activations off ReLU kinks.
    let l = p.layout.clone();
    let mut shifts: Vec<_> = l.frame.iter().map(|&(_, b)| b).collect();
    shifts.extend([l.head_b, l.gamma, l.beta, l.out_b]);
    for b in shifts {
        for v in &mut p.values[b.range()] {
            *v += r.random_range(-0.5..0.5);
        }
    }
    for v in &mut p.running_mean {
        *v = r.random_range(-0.5..0.5);
    }
    for v in &mut p.running_var {
        *v = r.random_range(0.5..2.0);
    }
    p
}

fn toy_frames(n: usize, seed: u64) -> Vec<Mat<f64>> {
    let mut r = stream(seed, Stream::Utterance, 1);
    (0..n)
        .map(|_| {
            let t = r.random_range(5..9);
            Mat::from_vec(t, 4, (0..t * 4).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap()
        })
        .collect()
}

fn unit(r: &mut impl Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(r)).collect();
    l2_normalize(&v).unwrap()
}

fn near(v: &[f64], r: &mut impl Rng, s: f64) -> Vec<f64> {
    let w: Vec<f64> = v
        .iter()
        .map(|&x| {
            let z: f64 = StandardNormal.sample(r);
            x + s * z
        })
        .collect();
    l2_normalize(&w).unwrap()
}

/// Absolute floor of the relative-error denominator.
const FLOOR: f64 = 1e-4;

fn embed(p: &EncoderParams<f64>, xs: &[Mat<f64>]) -> Vec<Vec<f64>> {
    xs.iter().map(|x| p.embed(x).unwrap()).collect()
}

/// Max relative error between the chained analytic gradient and central
/// differences of `loss(embed(theta))` over every encoder parameter.
fn encoder_check(p: &EncoderParams<f64>, xs: &[Mat<f64>], loss: &dyn Fn(&[Vec<f64>]) -> Grads) -> f64 {
    let (_, ge) = loss(&embed(p, xs));
    let mut g = vec![0.0; p.num_params()];
    for (x, gi) in xs.iter().zip(&ge) {
        let mut out = p.forward(x).unwrap();
        for (a, b) in g.iter_mut().zip(backward(&mut out.tape, gi).unwrap()) {
            *a += b;
        }
    }
    let fd = finite_diff_grad(
        |v| {
            let mut q = p.clone();
            q.values.copy_from_slice(v);
            loss(&embed(&q, xs)).0
        },
        &p.values,
        1e-6,
    );
    max_rel_err(&g, &fd, FLOOR)
}

fn gradient_suite(seed: u64) -> Vec<(&'static str, f64)> {
    let p = toy_encoder(seed);
    let n = 4;
    let xs = toy_frames(2 * n, seed);
    let mut r = stream(seed, Stream::Mixing, 7);
    let base = embed(&p, &xs[..n]);
    let positives: Vec<Vec<f64>> = base.iter().map(|a| near(a, &mut r, 0.2)).collect();
    let mut keys: Vec<Vec<f64>> = (0..6).map(|_| unit(&mut r, 4)).collect();
    keys.push(near(&base[0], &mut r, 0.1));
    keys.push(near(&base[2], &mut r, 0.1));
    let bank = PrototypeBank::from_parts(
        (0..5).map(|_| unit(&mut r, 4)).collect(),
        (0..5).map(|_| r.random_range(0.1..0.5)).collect(),
    );
    let clusters: Vec<usize> = (0..n).map(|_| r.random_range(0..5)).collect();
    let rw = ReweightConfig::default();
    let tau = 0.2;
    let anchors = &xs[..n];
    let mut out = Vec::new();

    out.push((
        "simclr",
        encoder_check(&p, &xs, &|e| {
            let o = simclr_loss(e, tau).unwrap();
            (o.loss, o.grads)
        }),
    ));
    out.push((
        "moco",
        encoder_check(&p, anchors, &|e| {
            let o = moco_info_nce(e, &positives, &keys, tau).unwrap();
            (o.loss, o.grads)
        }),
    ));
    out.push((
        "reweighted",
        encoder_check(&p, anchors, &|e| {
            let (o, _) = reweighted_info_nce(e, &positives, &keys, &rw, tau).unwrap();
            (o.loss, o.grads)
        }),
    ));
    out.push((
        "protonce",
        encoder_check(&p, anchors, &|e| {
            let mut rr = stream(seed, Stream::ProtoSample, 0);
            let o = proto_nce(e, &clusters, &bank, 3, &mut rr).unwrap();
            (o.loss, o.grads)
        }),
    ));
    out.push((
        "c3",
        encoder_check(&p, anchors, &|e| {
            let mut rr = stream(seed, Stream::ProtoSample, 0);
            let o = c3_loss(e, &positives, &keys, &bank, &clusters, &rw, tau, 0.5, 3, &mut rr).unwrap();
            (o.loss, o.grads)
        }),
    ));

    let k = 6;
    let head: DinoHead<f64> = DinoHead::new(4, k, seed).unwrap();
    let temps = TempPair::default();
    let center: Vec<f64> = (0..k).map(|_| r.random_range(-0.3..0.3)).collect();
    let teacher: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..k).map(|_| r.random_range(-2.0..2.0)).collect())
        .collect();
    // Two samples, each with two global and two local student views.
    let dino = |h: &DinoHead<f64>, e: &[Vec<f64>], head_grads: Option<&mut Vec<f64>>| -> Grads {
        let mut loss = 0.0;
        let mut ge = Vec::new();
        let mut hg = vec![0.0; h.values.len()];
        for s in 0..2 {
            let views: Vec<Vec<f64>> = e[4 * s..4 * s + 4].iter().map(|v| h.logits(v)).collect();
            let o = multicrop_loss(&teacher[2 * s..2 * s + 2], &views, &center, &temps, 2).unwrap();
            loss += 0.5 * o.loss;
            for (v, g) in e[4 * s..4 * s + 4].iter().zip(&o.grads) {
                let half: Vec<f64> = g.iter().map(|x| 0.5 * x).collect();
                ge.push(h.backward(v, &half, &mut hg));
            }
        }
        if let Some(out) = head_grads {
            *out = hg;
        }
        (loss, ge)
    };
    out.push(("dino", encoder_check(&p, &xs, &|e| dino(&head, e, None))));
    let e = embed(&p, &xs);
    let mut hg = Vec::new();
    dino(&head, &e, Some(&mut hg));
    let fd = finite_diff_grad(
        |v| {
            let mut h = head.clone();
            h.values.copy_from_slice(v);
            dino(&h, &e, None).0
        },
        &head.values,
        1e-6,
    );
    out.push(("dino head", max_rel_err(&hg, &fd, FLOOR)));
    out
}

fn criterion_1(rep: &mut Report) {
    let t = Instant::now();
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for seed in 0..10 {
        for (name, err) in gradient_suite(seed) {
            match worst.iter_mut().find(|w| w.0 == name) {
                Some(w) => w.1 = w.1.max(err),
                None => worst.push((name, err)),
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let detail: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    rep.line(
        1,
        max < 1e-4 && secs < 120.0,
        true,
        format!(
            "max rel err {max:.2e} over 10 seeds ({}) in {secs:.1}s",
            detail.join(", ")
        ),
    );
}

// ------------------------------------------------------------------ oracles

fn brute_points(scores: &[f64], targets: &[bool]) -> Vec<(f64, f64, f64)> {
    let mut u: Vec<f64> = scores.to_vec();
    u.sort_by(f64::total_cmp);
    u.dedup();
    let mut thresholds = vec![u[0]];
    thresholds.extend(u.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    thresholds.push(u[u.len() - 1] + 1.0);
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

fn brute_eer(pts: &[(f64, f64, f64)]) -> f64 {
    for i in 0..pts.len() {
        let (_, fa, miss) = pts[i];
        if miss >= fa {
            if i == 0 {
                return fa;
            }
            let (_, fa0, miss0) = pts[i - 1];
            let t = (miss0 - fa0) / ((miss0 - fa0) - (miss - fa));
            return fa0 + t * (fa - fa0);
        }
    }
    pts[pts.len() - 1].1
}

fn brute_min_dcf(pts: &[(f64, f64, f64)]) -> f64 {
    pts.iter()
        .map(|&(_, fa, miss)| (0.01 * miss + 0.99 * fa) / 0.01)
        .fold(f64::INFINITY, f64::min)
}

fn criterion_2(rep: &mut Report) {
    let mut r = stream(2, Stream::Trials, 0);
    let (mut eer_err, mut dcf_err) = (0.0f64, 0.0f64);
    for case in 0..200 {
        let n = r.random_range(2..=2000);
        let frac: f64 = r.random_range(0.05..0.95);
        let mut targets: Vec<bool> = (0..n).map(|_| r.random_bool(frac)).collect();
        targets[0] = true;
        targets[1] = false;
        let shift: f64 = r.random_range(0.0..3.0);
        let coarse = case % 3 == 0;
        let scores: Vec<f64> = targets
            .iter()
            .map(|&t| {
                let z: f64 = StandardNormal.sample(&mut r);
                let s = z + if t { shift } else { 0.0 };
                if coarse {
                    (s * 4.0).round() / 4.0
                } else {
                    s
                }
            })
            .collect();
        let set = ScoreSet::from_scores(scores.clone(), targets.clone());
        let pts = brute_points(&scores, &targets);
        eer_err = eer_err.max((compute_eer(&set).unwrap().0 - brute_eer(&pts)).abs());
        dcf_err = dcf_err.max((compute_min_dcf(&set, DcfParams::default()).unwrap().0 - brute_min_dcf(&pts)).abs());
    }
    let mut pfn_bad = 0;
    for _ in 0..500 {
        let n = r.random_range(1..=64);
        let classes = r.random_range(1..=80);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
        let hits = (0..n)
            .filter(|&i| (0..n).any(|j| j != i && labels[j] == labels[i]))
            .count();
        if pfn_compute(&labels) != hits as f64 / n as f64 {
            pfn_bad += 1;
        }
    }
    rep.line(
        2,
        eer_err <= 1e-12 && dcf_err <= 1e-12 && pfn_bad == 0,
        true,
        format!("EER max diff {eer_err:.1e}, minDCF max diff {dcf_err:.1e} on 200 sets; p_fn mismatches {pfn_bad}/500"),
    );
}

// ------------------------------------------------------------- closed forms

fn criterion_3(rep: &mut Report) {
    let m = 0.996;
    let n = 500;
    let mut teacher = toy_encoder(3);
    let t0 = teacher.clone();
    let student = toy_encoder(4);
    for _ in 0..n {
        teacher.ema_from(&student, m).unwrap();
    }
    let mn = f64::powi(m, n);
    let closed = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| mn * x + (1.0 - mn) * y).collect() };
    let enc_err = [
        max_abs(&teacher.values, &closed(&t0.values, &student.values)),
        max_abs(&teacher.running_mean, &closed(&t0.running_mean, &student.running_mean)),
        max_abs(&teacher.running_var, &closed(&t0.running_var, &student.running_var)),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    let mc = 0.99;
    let mut r = stream(3, Stream::Mixing, 0);
    let k = 8;
    let mut c = CenterState::new(k, mc);
    c.center = (0..k).map(|_| r.random_range(-1.0..1.0)).collect();
    let c0 = c.center.clone();
    let batches: Vec<Vec<Vec<f64>>> = (0..200)
        .map(|_| {
            (0..5)
                .map(|_| (0..k).map(|_| r.random_range(-3.0..3.0)).collect())
                .collect()
        })
        .collect();
    for b in &batches {
        c = update_center(&c, b, mc).unwrap();
    }
    let steps = batches.len() as i32;
    let expect: Vec<f64> = (0..k)
        .map(|j| {
            let mut acc = f64::powi(mc, steps) * c0[j];
            for (i, b) in batches.iter().enumerate() {
                let mean = b.iter().map(|x| x[j]).sum::<f64>() / b.len() as f64;
                acc += (1.0 - mc) * f64::powi(mc, steps - 1 - i as i32) * mean;
            }
            acc
        })
        .collect();
    let center_err = max_abs(&c.center, &expect);

    let sched = LrSchedule::over_steps(1e-3, 1e-5, 1001);
    let first = lr_at(&sched, 0).unwrap();
    let last = lr_at(&sched, sched.total).unwrap();
    let mid = lr_at(&sched, sched.total / 2).unwrap();
    let lr_ok = first == 1e-3 && last == 1e-5 && (mid - 5.05e-4).abs() < 1e-15;
    rep.line(
        3,
        enc_err <= 1e-12 && center_err <= 1e-12 && lr_ok,
        true,
        format!(
            "encoder EMA (m={m}, {n} steps) err {enc_err:.1e}; center EMA (m={mc}) err {center_err:.1e}; \
             lr start {first:e} end {last:e} mid {mid:e}"
        ),
    );
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------- learning trends

/// Default synthetic dataset; training uses temperature 0.2 and stronger
/// augmentation than the library defaults.
fn acceptance_config(seed: u64, mode: Mode) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        mode,
        ..Default::default()
    };
    cfg.augment.severity = 2.0;
    cfg.train.tau = 0.2;
    cfg.train.stages.frames_per_epoch = 250_000;
    cfg.eval.probe_every_epoch = false;
    cfg
}

struct Run {
    state: TrainState,
    rows: Vec<MetricsRow>,
    eer: f64,
    secs: f64,
}

fn train(cfg: &RunConfig) -> Run {
    let t = Instant::now();
    let mut exp = Experiment::generate(cfg).unwrap();
    let (state, rows) = run_pipeline(cfg, &mut exp, None, |_, _, _| Ok(())).unwrap();
    let eer = exp.evaluate(&state.pair.teacher).unwrap().0;
    Run {
        state,
        rows,
        eer,
        secs: t.elapsed().as_secs_f64(),
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn artifacts(cfg: &RunConfig, run: &Run, dir: &std::path::Path) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let exp = Experiment::generate(cfg).unwrap();
    let metrics = dir.join("metrics.csv");
    let archive = dir.join("eval.c3em");
    append_metrics(&metrics, &run.rows).unwrap();
    write_embeddings(&archive, &exp.eval_table(&run.state.pair.teacher).unwrap()).unwrap();
    (
        std::fs::read(metrics).unwrap(),
        std::fs::read(archive).unwrap(),
        checkpoint_bytes(&run.state),
    )
}

fn main() {
    let mut rep = Report {
        hard_failures: Vec::new(),
    };
    criterion_1(&mut rep);
    criterion_2(&mut rep);
    criterion_3(&mut rep);

    let seeds = [0u64, 1, 2];
    let modes = [Mode::Moco, Mode::C3Moco, Mode::Dino, Mode::C3Dino2];
    let mut eers: Vec<Vec<f64>> = vec![Vec::new(); modes.len()];
    let mut teachers = Vec::new();
    let mut moco0 = None;
    let mut init0 = 0.0;
    for &seed in &seeds {
        for (i, &mode) in modes.iter().enumerate() {
            let cfg = acceptance_config(seed, mode);
            let run = train(&cfg);
            println!(
                "  seed {seed} {:<9} EER {} ({:.0}s)",
                mode.to_string(),
                pct(run.eer),
                run.secs
            );
            eers[i].push(run.eer);
            if mode == Mode::C3Dino2 {
                teachers.push((seed, run.state.pair.teacher.clone(), run.eer));
            }
            if seed == 0 && mode == Mode::Moco {
                let exp = Experiment::generate(&cfg).unwrap();
                init0 = exp.evaluate(&TrainState::fresh(&cfg).unwrap().pair.teacher).unwrap().0;
                moco0 = Some(run);
            }
        }
    }
    let moco0 = moco0.unwrap();

    let epochs = moco0.rows.len();
    rep.line(
        4,
        epochs >= 8 && moco0.eer <= 0.5 * init0 && moco0.secs < 600.0,
        false,
        format!(
            "MoCo {epochs} epochs: EER {} vs random init {} (ratio {:.2}, need <= 0.5) in {:.0}s",
            pct(moco0.eer),
            pct(init0),
            moco0.eer / init0,
            moco0.secs
        ),
    );

    let med: Vec<f64> = eers.iter().map(|v| median(v.clone())).collect();
    let (moco, c3moco, dino, c3dino2) = (med[0], med[1], med[2], med[3]);
    let mut violations = Vec::new();
    for (s, &seed) in seeds.iter().enumerate() {
        let e: Vec<f64> = eers.iter().map(|v| v[s]).collect();
        if e[1] > e[0] {
            violations.push(format!("seed {seed} C3-MoCo > MoCo"));
        }
        if e[3] > e[2] {
            violations.push(format!("seed {seed} C3-DINO2 > DINO"));
        }
        if e[2] > e[0] {
            violations.push(format!("seed {seed} DINO > MoCo"));
        }
    }
    rep.line(
        5,
        c3moco <= moco && c3dino2 <= dino && dino <= moco,
        false,
        format!(
            "median EER MoCo {} C3-MoCo {} DINO {} C3-DINO2 {}; seed-level violations: {}",
            pct(moco),
            pct(c3moco),
            pct(dino),
            pct(c3dino2),
            if violations.is_empty() {
                "none".to_string()
            } else {
                violations.join(", ")
            }
        ),
    );

    let levels: Vec<PfnLevel> = ["natural", "natural/2", "0"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let mut sweep: Vec<Vec<f64>> = vec![Vec::new(); 3];
    for &seed in &seeds {
        let mut cfg = acceptance_config(seed, Mode::PfnSweep);
        cfg.train.tau = 0.07;
        let mut exp = Experiment::generate(&cfg).unwrap();
        let rows = pfn_sweep(&cfg, &mut exp, &levels).unwrap();
        let line: Vec<String> = rows
            .iter()
            .map(|r| format!("p_fn {:.3} EER {}", r.retained_pfn, pct(r.eer)))
            .collect();
        println!("  sweep seed {seed}: {}", line.join(" | "));
        for (v, r) in sweep.iter_mut().zip(&rows) {
            v.push(r.eer);
        }
    }
    let sm: Vec<f64> = sweep.into_iter().map(median).collect();
    let monotone = sm[2] <= sm[1] && sm[1] <= sm[0];
    rep.line(
        6,
        sm[2] < sm[0],
        false,
        format!(
            "median EER natural {} natural/2 {} zero {} (full chain {})",
            pct(sm[0]),
            pct(sm[1]),
            pct(sm[2]),
            if monotone { "monotone" } else { "not monotone" }
        ),
    );

    let mut cfg = acceptance_config(0, Mode::Dino);
    cfg.train.stages.dino_scratch = 4;
    cfg.train.dino.head_k = 64;
    let log_k = (cfg.train.dino.head_k as f64).ln();
    cfg.train.dino.centering = true;
    let on = train(&cfg).rows;
    cfg.train.dino.centering = false;
    let off = train(&cfg).rows;
    let lowest = |rows: &[MetricsRow]| {
        rows.iter()
            .map(|r| r.batch_mean_entropy_min.unwrap())
            .fold(f64::INFINITY, f64::min)
    };
    let off_min = lowest(&off);
    let on_min = lowest(&on[1..]);
    let on_means: Vec<String> = on
        .iter()
        .map(|r| format!("{:.2}", r.epoch_mean_entropy.unwrap()))
        .collect();
    rep.line(
        7,
        off_min < 0.5 * log_k && on_min >= 0.9 * log_k,
        false,
        format!(
            "K={} log K {log_k:.2}: centering off min {off_min:.2} (need < {:.2}); centering on min after epoch 1 \
             {on_min:.2} (need >= {:.2}), epoch means [{}]",
            cfg.train.dino.head_k,
            0.5 * log_k,
            0.9 * log_k,
            on_means.join(", ")
        ),
    );

    let mut raw = Vec::new();
    let mut back = Vec::new();
    for (seed, teacher, eer) in &teachers {
        let cfg = acceptance_config(*seed, Mode::C3Dino2);
        let exp = Experiment::generate(&cfg).unwrap();
        let train_emb = exp.backend_train_embeddings(&cfg, teacher).unwrap();
        let eval = exp.eval_table(teacher).unwrap();
        let (scores, _) = backend_pipeline(&train_emb, &eval, &exp.trials, &cfg.backend).unwrap();
        let b = compute_eer(&scores).unwrap().0;
        let raw_check = compute_eer(&score_trials(&eval, &exp.trials).unwrap()).unwrap().0;
        assert_eq!(raw_check, *eer);
        let mut wide = cfg.backend.clone();
        wide.clusters *= 2;
        let (ws, _) = backend_pipeline(&train_emb, &eval, &exp.trials, &wide).unwrap();
        println!(
            "  backend seed {seed}: raw CDS {} backend {} ({} clusters: {})",
            pct(*eer),
            pct(b),
            wide.clusters,
            pct(compute_eer(&ws).unwrap().0)
        );
        raw.push(*eer);
        back.push(b);
    }
    let wins = raw.iter().zip(&back).filter(|(r, b)| b <= r).count();
    let diff = median(raw.iter().zip(&back).map(|(r, b)| b - r).collect());
    let (mr, mb) = (median(raw), median(back));
    rep.line(
        8,
        mb <= mr,
        false,
        format!(
            "median EER backend {} vs raw CDS {} ({} clusters); backend <= raw on {wins}/3 seeds, \
             median paired difference {:+.2} points",
            pct(mb),
            pct(mr),
            cfg.backend.clusters,
            100.0 * diff
        ),
    );

    let cfg = acceptance_config(0, Mode::Moco);
    let again = train(&cfg);
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = artifacts(&cfg, &moco0, dir_a.path());
    let b = artifacts(&cfg, &again, dir_b.path());
    rep.line(
        9,
        a == b,
        true,
        format!(
            "rerun metrics log {}, embedding archive {}, checkpoint {}",
            if a.0 == b.0 { "identical" } else { "differs" },
            if a.1 == b.1 { "identical" } else { "differs" },
            if a.2 == b.2 { "identical" } else { "differs" },
        ),
    );

    if !rep.hard_failures.is_empty() {
        eprintln!("exact criteria failed: {:?}", rep.hard_failures);
        std::process::exit(1);
    }
}
