//! `c3dino` command-line front end.
//!
//! Configuration precedence: built-in defaults, then the `--config` TOML
//! file, then command-line flags. Every command that consumes a config
//! writes the resolved config next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use c3dino::backend::{
    backend_pipeline, compute_eer, compute_min_dcf, det_export, det_points, read_embeddings, read_scores, score_trials,
    write_embeddings, write_scores, BackendConfig, DcfParams, EmbeddingTable, ScoreSet,
};
use c3dino::data::{generate_dataset, make_trials, read_dataset, read_trials, write_dataset, write_trials, Dataset};
use c3dino::train::{
    append_metrics, pfn_sweep, read_checkpoint, run_pipeline, write_checkpoint, Experiment, Mode, PfnLevel, RunConfig,
    SweepRow, METRICS_HEADER,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "c3dino", version, about = "Self-supervised speaker embedding laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its probe trial list.
    Synth(SynthArgs),
    /// Train a model; writes a run directory.
    Train(TrainArgs),
    /// Extract one embedding per utterance from a checkpoint.
    Embed(EmbedArgs),
    /// Score trials with cosine scoring; prints EER and minDCF.
    #[command(alias = "score")]
    Eval(EvalArgs),
    /// Cluster + LDA back-end trained on unlabeled embeddings.
    Backend(BackendArgs),
    /// Controlled false-negative sweep.
    PfnSweep(SweepArgs),
    /// Write the DET curve of a score file as CSV.
    DetExport(DetArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    speakers: Option<usize>,
    #[arg(long)]
    utts_per_speaker: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mode: Option<Mode>,
    /// Epochs of the first stage (the whole run for the dino baseline).
    #[arg(long)]
    epochs: Option<usize>,
    /// Dataset directory written by `synth`; synthesized from the config if
    /// omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint to resume from.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory written by `synth`.
    #[arg(long)]
    data: PathBuf,
    /// Output archive.
    #[arg(long)]
    out: PathBuf,
    /// Use the teacher (momentum) encoder; the default.
    #[arg(long, conflicts_with = "use_student")]
    use_teacher: bool,
    #[arg(long)]
    use_student: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    trials: PathBuf,
    /// Output directory for scores/ and det/.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BackendArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Unlabeled embeddings the back-end is trained on.
    #[arg(long)]
    train_embeddings: PathBuf,
    /// Evaluation embeddings.
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    trials: PathBuf,
    #[arg(long)]
    clusters: Option<usize>,
    /// LDA output dimension (0 = half the embedding dimension).
    #[arg(long)]
    lda_dim: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Comma-separated levels: `natural`, `natural/<k>` or a number.
    #[arg(long, value_delimiter = ',')]
    pfn_levels: Option<Vec<String>>,
    /// Training epochs per level.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    trials: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Malformed config file.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn write_config(cfg: &RunConfig, path: &Path) -> Result<()> {
    fs::write(path, toml::to_string(cfg)?).with_context(|| format!("writing {}", path.display()))
}

fn dataset_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("manifest.txt"), dir.join("frames.bin"))
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    let (m, f) = dataset_paths(dir);
    read_dataset(&m, &f).with_context(|| format!("reading dataset in {}", dir.display()))
}

fn print_metrics(label: &str, set: &ScoreSet<f64>) -> Result<(f64, f64)> {
    let (eer, _) = compute_eer(set)?;
    let (dcf, _) = compute_min_dcf(set, DcfParams::default())?;
    if !(eer.is_finite() && dcf.is_finite()) {
        bail!("non-finite metrics");
    }
    println!("{label}EER: {:.4}%  minDCF(0.01): {:.4}", 100.0 * eer, dcf);
    Ok((eer, dcf))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut cfg = load_config(&a.cfg)?;
    if let Some(seed) = a.cfg.seed {
        cfg.data.seed = seed;
    }
    if let Some(n) = a.speakers {
        cfg.data.speakers = n;
    }
    if let Some(n) = a.utts_per_speaker {
        cfg.data.utts_per_speaker = n;
    }
    cfg.validate()?;
    let ds = generate_dataset(&cfg.data)?;
    fs::create_dir_all(&a.out)?;
    let (m, f) = dataset_paths(&a.out);
    write_dataset(&ds, &m, &f)?;
    let (_, eval) = ds.split_speakers(cfg.eval.holdout_speakers)?;
    let trials = make_trials(&eval, cfg.eval.n_target, cfg.eval.n_nontarget, cfg.data.seed)?;
    write_trials(&a.out.join("trials.txt"), &trials)?;
    write_config(&cfg, &a.out.join("config.toml"))?;
    println!(
        "wrote {} utterances of {} speakers and {} trials to {}",
        ds.len(),
        cfg.data.speakers,
        trials.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.cfg)?;
    if let Some(mode) = a.mode {
        cfg.mode = mode;
    }
    if let Some(e) = a.epochs {
        match cfg.mode {
            Mode::Dino => cfg.train.stages.dino_scratch = e,
            _ => cfg.train.stages.moco = e,
        }
    }
    if cfg.mode == Mode::PfnSweep {
        bail!(c3dino::Error::InvalidConfig(
            "use the pfn-sweep command for mode pfn_sweep".into()
        ));
    }
    cfg.validate()?;
    let mut exp = match &a.data {
        Some(dir) => Experiment::from_dataset(&cfg, &load_dataset(dir)?)?,
        None => Experiment::generate(&cfg)?,
    };
    let resume = a.resume.as_deref().map(read_checkpoint).transpose()?;
    let run = &a.out;
    let ckpt_dir = run.join("checkpoints");
    let log_dir = run.join("logs");
    for d in [
        &ckpt_dir,
        &log_dir,
        &run.join("embeddings"),
        &run.join("scores"),
        &run.join("det"),
    ] {
        fs::create_dir_all(d)?;
    }
    write_config(&cfg, &run.join("config.toml"))?;
    let metrics = log_dir.join("metrics.csv");
    if resume.is_none() || !metrics.exists() {
        fs::write(&metrics, format!("{METRICS_HEADER}\n"))?;
    }
    let mut stage_index = 0;
    let (state, _) = run_pipeline(&cfg, &mut exp, resume, |spec, state, rows| {
        append_metrics(&metrics, rows)?;
        stage_index += 1;
        let name = format!("stage{stage_index}-{}.ckpt", spec.stage.name());
        write_checkpoint(&ckpt_dir.join(name), state)
    })?;
    write_checkpoint(&ckpt_dir.join("final.ckpt"), &state)?;

    write_trials(&run.join("trials.txt"), &exp.trials)?;
    let table = exp.eval_table(&state.pair.teacher)?;
    write_embeddings(&run.join("embeddings").join("eval.c3em"), &table)?;
    let scores = score_trials(&table, &exp.trials)?;
    write_scores(&run.join("scores").join("eval.txt"), &scores)?;
    det_export(&det_points(&scores)?, &run.join("det").join("eval.csv"))?;
    print_metrics("probe (teacher) ", &scores)?;
    Ok(())
}

fn cmd_embed(a: EmbedArgs) -> Result<()> {
    let state = read_checkpoint(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    let enc = if a.use_student {
        &state.pair.student
    } else {
        &state.pair.teacher
    };
    let rows = ds
        .utterances
        .iter()
        .map(|u| enc.embed(&u.frames))
        .collect::<c3dino::Result<Vec<_>>>()?;
    let table = EmbeddingTable::new(ds.utterances.iter().map(|u| u.id.clone()).collect(), rows)?;
    if let Some(dir) = a.out.parent() {
        fs::create_dir_all(dir)?;
    }
    write_embeddings(&a.out, &table)?;
    println!(
        "wrote {} {} embeddings of dimension {} to {}",
        table.len(),
        if a.use_student { "student" } else { "teacher" },
        table.dim(),
        a.out.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let table = read_embeddings(&a.embeddings)?;
    let trials = read_trials(&a.trials)?;
    let scores = score_trials(&table, &trials)?;
    fs::create_dir_all(a.out.join("scores"))?;
    fs::create_dir_all(a.out.join("det"))?;
    write_scores(&a.out.join("scores").join("scores.txt"), &scores)?;
    det_export(&det_points(&scores)?, &a.out.join("det").join("det.csv"))?;
    print_metrics("", &scores)?;
    Ok(())
}

fn cmd_backend(a: BackendArgs) -> Result<()> {
    let cfg = load_config(&a.cfg)?;
    let mut bcfg: BackendConfig = cfg.backend.clone();
    if let Some(seed) = a.cfg.seed {
        bcfg.seed = seed;
    }
    if let Some(c) = a.clusters {
        bcfg.clusters = c;
    }
    if let Some(d) = a.lda_dim {
        bcfg.lda_dim = d;
    }
    if bcfg.clusters < 2 {
        bail!(c3dino::Error::InvalidConfig(
            "the back-end needs at least 2 clusters".into()
        ));
    }
    let train = read_embeddings(&a.train_embeddings)?;
    let eval = read_embeddings(&a.embeddings)?;
    let trials = read_trials(&a.trials)?;
    let raw = score_trials(&eval, &trials)?;
    let (scores, model) = backend_pipeline(&train.rows, &eval, &trials, &bcfg)?;
    fs::create_dir_all(a.out.join("scores"))?;
    fs::create_dir_all(a.out.join("det"))?;
    write_scores(&a.out.join("scores").join("backend.txt"), &scores)?;
    det_export(&det_points(&scores)?, &a.out.join("det").join("backend.csv"))?;
    print_metrics("raw CDS  ", &raw)?;
    print_metrics(&format!("LDA {:>3}d ", model.output_dim()), &scores)?;
    Ok(())
}

fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = format!("{:<10}", "level");
    for r in rows {
        out += &format!("{:>12}", r.level.to_string());
    }
    out += &format!("\n{:<10}", "p_fn");
    for r in rows {
        out += &format!("{:>12.4}", r.retained_pfn);
    }
    out += &format!("\n{:<10}", "EER (%)");
    for r in rows {
        out += &format!("{:>12.2}", 100.0 * r.eer);
    }
    out.push('\n');
    out
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = load_config(&a.cfg)?;
    cfg.mode = Mode::PfnSweep;
    if let Some(levels) = a.pfn_levels {
        cfg.train.pfn_levels = levels;
    }
    if let Some(e) = a.epochs {
        cfg.train.stages.moco = e;
    }
    cfg.validate()?;
    let levels = cfg
        .train
        .pfn_levels
        .iter()
        .map(|s| s.parse::<PfnLevel>())
        .collect::<c3dino::Result<Vec<_>>>()?;
    let mut exp = match &a.data {
        Some(dir) => Experiment::from_dataset(&cfg, &load_dataset(dir)?)?,
        None => Experiment::generate(&cfg)?,
    };
    fs::create_dir_all(&a.out)?;
    write_config(&cfg, &a.out.join("config.toml"))?;
    let rows = pfn_sweep(&cfg, &mut exp, &levels)?;
    let mut csv = String::from("level,natural_pfn,retained_pfn,eer,min_dcf\n");
    for r in &rows {
        csv += &format!(
            "{},{},{},{},{}\n",
            r.level, r.natural_pfn, r.retained_pfn, r.eer, r.min_dcf
        );
    }
    fs::write(a.out.join("sweep.csv"), csv)?;
    print!("{}", sweep_table(&rows));
    Ok(())
}

fn cmd_det(a: DetArgs) -> Result<()> {
    let trials = read_trials(&a.trials)?;
    let scores = read_scores(&a.scores, &trials)?;
    det_export(&det_points(&scores)?, &a.out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Backend(a) => cmd_backend(a),
        Command::PfnSweep(a) => cmd_sweep(a),
        Command::DetExport(a) => cmd_det(a),
    }
}

fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<c3dino::Error>()
            .is_some_and(c3dino::Error::is_validation)
            || e.downcast_ref::<ConfigError>().is_some()
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("C3_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_validation(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
