use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mmfuse::audit::{full_audit, AUDIT_TOLERANCE};
use mmfuse::data::{generate_synthetic, Manifest, Modality, SynthConfig, Task};
use mmfuse::fusion::KvSource;
use mmfuse::metrics::{aggregate_folds, FoldReport};
use mmfuse::model::{FusionMode, ModalityMask};
use mmfuse::trainer::{evaluate, train, Checkpoint, EpochLog, EvalReport, TrainConfig};
use mmfuse::Error;

#[derive(Parser, Debug)]
#[command(
    name = "mmfuse",
    version,
    about = "Three-stream GRU + cross-attention fusion: synthesis, training, evaluation and audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (feature files + manifest.jsonl).
    Synth(SynthArgs),
    /// Train one model; writes a checkpoint and a JSON Lines epoch log.
    Train(TrainArgs),
    /// Score a checkpoint on one fold; prints metric JSON.
    Eval(EvalArgs),
    /// Finite-difference gradient audit; exit 0 iff every check passes.
    Gradcheck(GradcheckArgs),
    /// Train full, naive-concat and single-modality variants and compare.
    Ablate(AblateArgs),
    /// Aggregate five eval outputs into a fold report.
    Report(ReportArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum TaskArg {
    Classification,
    Regression,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Classification => Task::Classification,
            TaskArg::Regression => Task::Regression,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum FusionArg {
    Attention,
    Concat,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum KvArg {
    Sequence,
    Final,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModalityArg {
    Video,
    Image,
    Text,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Video => Modality::Video,
            ModalityArg::Image => Modality::Image,
            ModalityArg::Text => Modality::Text,
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of clips.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = TaskArg::Classification)]
    task: TaskArg,
    #[arg(long, default_value_t = 8)]
    d_v: usize,
    #[arg(long, default_value_t = 8)]
    d_i: usize,
    #[arg(long, default_value_t = 8)]
    d_t: usize,
    /// Frames per clip.
    #[arg(long, default_value_t = 64)]
    frames: usize,
    /// Per-frame noise standard deviation.
    #[arg(long)]
    noise: Option<f64>,
    /// Frames in the signal-carrying event span (0: every frame).
    #[arg(long)]
    event_len: Option<usize>,
    /// Scale of the event marker added to signal frames.
    #[arg(long)]
    marker: Option<f64>,
}

/// Training overrides applied on top of the config file (or defaults).
#[derive(Args, Debug, Clone, Default)]
struct TrainOverrides {
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Maximum epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Early-stopping patience (epochs).
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    d_h: Option<usize>,
    /// Fold held out for validation (1-5).
    #[arg(long)]
    val_fold: Option<u32>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, value_enum)]
    fusion: Option<FusionArg>,
    /// Attention keys/values: full hidden sequence or final state only.
    #[arg(long, value_enum)]
    kv: Option<KvArg>,
    /// Keep only this stream; the others are replaced by zero encodings.
    #[arg(long, value_enum)]
    only: Option<ModalityArg>,
    /// Enable the reconstruction (autoencoding) term.
    #[arg(long)]
    recon: bool,
    /// Reconstruction weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Focal-loss positive-class weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Focal-loss focusing exponent.
    #[arg(long)]
    gamma: Option<f64>,
    /// Disable train-time feature augmentation.
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    mask_p: Option<f64>,
    /// Squash regression outputs with tanh.
    #[arg(long)]
    tanh_output: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for checkpoint/ and epochs.jsonl.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Fold to score; defaults to the checkpoint's validation fold.
    #[arg(long)]
    fold: Option<u32>,
    /// Also write the metric JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Write per-check results as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for ablation.json and per-run logs.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Comma-separated subset of variants to run (full, concat, video-only, image-only, text-only).
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Five eval JSON files, one per fold.
    #[arg(required = true, num_args = 5)]
    evals: Vec<PathBuf>,
    /// Row label in the table.
    #[arg(long, default_value = "multimodal")]
    label: String,
    /// Also write the report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

type CliResult<T> = Result<T, Error>;

fn seed_or_generate(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u32>() as u64;
        eprintln!("no --seed given; using generated seed {s}");
        s
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn build_config(o: &TrainOverrides) -> CliResult<TrainConfig> {
    let mut cfg = match &o.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if o.config.is_none() || o.seed.is_some() {
        cfg.seed = seed_or_generate(o.seed);
    }
    if let Some(t) = o.task {
        cfg.model.task = t.into();
    }
    macro_rules! set {
        ($($field:ident => $target:expr),* $(,)?) => {
            $(if let Some(v) = o.$field { $target = v; })*
        };
    }
    set! {
        lr => cfg.lr,
        batch => cfg.batch,
        epochs => cfg.max_epochs,
        patience => cfg.patience,
        weight_decay => cfg.weight_decay,
        d_h => cfg.model.d_h,
        val_fold => cfg.val_fold,
        stride => cfg.stride,
        lambda => cfg.loss.lambda,
        alpha => cfg.loss.alpha,
        gamma => cfg.loss.gamma,
        sigma => cfg.sigma,
        mask_p => cfg.mask_p,
    }
    if let Some(f) = o.fusion {
        cfg.model.fusion = match f {
            FusionArg::Attention => FusionMode::Attention,
            FusionArg::Concat => FusionMode::Concat,
        };
    }
    if let Some(kv) = o.kv {
        cfg.model.kv = match kv {
            KvArg::Sequence => KvSource::Sequence,
            KvArg::Final => KvSource::Final,
        };
    }
    if let Some(m) = o.only {
        cfg.model.modalities = ModalityMask::only(m.into());
    }
    if o.recon {
        cfg.model.recon = true;
    }
    if o.no_augment {
        cfg.augment = false;
    }
    if o.tanh_output {
        cfg.model.tanh_output = true;
    }
    Ok(cfg)
}

/// Fills feature dims from the manifest's first clip.
fn adopt_manifest_dims(cfg: &mut TrainConfig, manifest: &Manifest) -> CliResult<()> {
    let rec = manifest
        .records
        .first()
        .ok_or_else(|| Error::Config("manifest has no clips".into()))?;
    for m in Modality::ALL {
        let seq = mmfuse::data::read_features(&manifest.resolve(rec.path(m)), m)?;
        match m {
            Modality::Video => cfg.model.d_v = seq.dim(),
            Modality::Image => cfg.model.d_i = seq.dim(),
            Modality::Text => cfg.model.d_t = seq.dim(),
        }
    }
    Ok(())
}

fn write_epoch_log(path: &Path, log: &[EpochLog]) -> CliResult<()> {
    let mut buf = Vec::new();
    for e in log {
        serde_json::to_writer(&mut buf, e).map_err(|err| Error::Json {
            path: path.into(),
            source: err,
        })?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn run_synth(a: SynthArgs) -> CliResult<()> {
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        n_clips: a.n,
        d_v: a.d_v,
        d_i: a.d_i,
        d_t: a.d_t,
        task: a.task.into(),
        seed: seed_or_generate(a.seed),
        frames: a.frames,
        noise: a.noise.unwrap_or(defaults.noise),
        event_len: a.event_len.unwrap_or(defaults.event_len),
        marker: a.marker.unwrap_or(defaults.marker),
    };
    let manifest = generate_synthetic(&cfg, &a.out)?;
    eprintln!(
        "wrote {} clips ({}) to {}",
        manifest.records.len(),
        cfg.task,
        a.out.display()
    );
    Ok(())
}

fn run_train(a: TrainArgs) -> CliResult<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let mut cfg = build_config(&a.overrides)?;
    adopt_manifest_dims(&mut cfg, &manifest)?;
    let start = Instant::now();
    let outcome = train(&cfg, &manifest)?;
    create_dir(&a.out)?;
    outcome.checkpoint.save(&a.out.join("checkpoint"))?;
    write_epoch_log(&a.out.join("epochs.jsonl"), &outcome.log)?;
    for e in &outcome.log {
        eprintln!(
            "epoch {:>3}  loss {:.6}  val {} {:.4}{}",
            e.epoch,
            e.train_loss,
            cfg.model.task.metric_name(),
            e.val_metric,
            if e.improved { "  *" } else { "" }
        );
    }
    eprintln!(
        "best {} {:.4} at epoch {} ({:.1}s)",
        cfg.model.task.metric_name(),
        outcome.checkpoint.best_score,
        outcome.checkpoint.epoch,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn run_eval(a: EvalArgs) -> CliResult<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let manifest = Manifest::load(&a.manifest)?;
    let fold = a.fold.unwrap_or(ckpt.config.val_fold);
    let report = evaluate(&ckpt, &manifest, fold)?;
    let json = serde_json::to_string(&report).expect("report serializes");
    println!("{json}");
    if let Some(out) = a.out {
        write_json(&out, &report)?;
    }
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> CliResult<bool> {
    let seed = seed_or_generate(a.seed);
    let start = Instant::now();
    let entries = full_audit(seed)?;
    let worst = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    for e in &entries {
        eprintln!(
            "{:<20} {:.3e}  {}",
            e.name,
            e.max_rel_error,
            if e.passed() { "ok" } else { "FAIL" }
        );
    }
    eprintln!(
        "{} checks in {:.2}s",
        entries.len(),
        start.elapsed().as_secs_f64()
    );
    println!("max relative error {worst:.3e} (tolerance {AUDIT_TOLERANCE:.0e})");
    if let Some(out) = a.out {
        write_json(&out, &entries)?;
    }
    Ok(entries.iter().all(|e| e.passed()))
}

#[derive(Debug, Serialize)]
struct VariantResult {
    variant: String,
    scores: Vec<f64>,
    mean: f64,
    best_epochs: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct AblationReport {
    metric: String,
    seeds: Vec<u64>,
    variants: Vec<VariantResult>,
}

fn ablation_variants(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let with = |fusion, modalities| {
        let mut c = base.clone();
        c.model.fusion = fusion;
        c.model.modalities = modalities;
        c
    };
    let mut out = vec![
        (
            "full".to_string(),
            with(FusionMode::Attention, ModalityMask::all()),
        ),
        (
            "concat".to_string(),
            with(FusionMode::Concat, ModalityMask::all()),
        ),
    ];
    for m in Modality::ALL {
        out.push((
            format!("{m}-only"),
            with(FusionMode::Attention, ModalityMask::only(m)),
        ));
    }
    out
}

fn run_ablate(a: AblateArgs) -> CliResult<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let mut base = build_config(&TrainOverrides {
        seed: Some(0),
        ..a.overrides.clone()
    })?;
    adopt_manifest_dims(&mut base, &manifest)?;
    let (train_w, val_w) = mmfuse::trainer::split_windows(&base, &manifest)?;
    create_dir(&a.out)?;

    let all = ablation_variants(&base);
    for v in &a.variants {
        if !all.iter().any(|(name, _)| name == v) {
            return Err(Error::Config(format!("unknown ablation variant {v:?}")));
        }
    }
    let mut variants = Vec::new();
    for (name, cfg) in all {
        if !a.variants.is_empty() && !a.variants.contains(&name) {
            continue;
        }
        let mut scores = Vec::new();
        let mut best_epochs = Vec::new();
        for &seed in &a.seeds {
            let run_cfg = TrainConfig {
                seed,
                ..cfg.clone()
            };
            let start = Instant::now();
            let outcome = mmfuse::trainer::train_on(&run_cfg, &train_w, &val_w)?;
            write_epoch_log(
                &a.out.join(format!("{name}.seed{seed}.jsonl")),
                &outcome.log,
            )?;
            eprintln!(
                "{name:<12} seed {seed}: {} {:.4} (epoch {}, {:.1}s)",
                base.model.task.metric_name(),
                outcome.checkpoint.best_score,
                outcome.checkpoint.epoch,
                start.elapsed().as_secs_f64()
            );
            scores.push(outcome.checkpoint.best_score);
            best_epochs.push(outcome.checkpoint.epoch);
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        variants.push(VariantResult {
            variant: name,
            scores,
            mean,
            best_epochs,
        });
    }

    let report = AblationReport {
        metric: base.model.task.metric_name().to_string(),
        seeds: a.seeds.clone(),
        variants,
    };
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{:<12} {:>8}  per-seed", "variant", report.metric);
    for v in &report.variants {
        let per: Vec<String> = v.scores.iter().map(|s| format!("{s:.4}")).collect();
        let _ = writeln!(
            stdout,
            "{:<12} {:>8.4}  {}",
            v.variant,
            v.mean,
            per.join(" ")
        );
    }
    write_json(&a.out.join("ablation.json"), &report)
}

fn run_report(a: ReportArgs) -> CliResult<()> {
    let mut scores = Vec::new();
    let mut metric: Option<String> = None;
    for p in &a.evals {
        let text = fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
        let r: EvalReport = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: p.clone(),
            source: e,
        })?;
        match &metric {
            Some(m) if *m != r.metric => {
                return Err(Error::Config(format!(
                    "{}: metric {} differs from {m}",
                    p.display(),
                    r.metric
                )))
            }
            _ => metric = Some(r.metric.clone()),
        }
        scores.push(r.score);
    }
    let report: FoldReport = aggregate_folds(&scores, metric.as_deref().unwrap_or("score"))?;
    println!("{}", FoldReport::table_header());
    println!("{}", report.table_row(&a.label));
    println!(
        "{}",
        serde_json::to_string(&report).expect("report serializes")
    );
    if let Some(out) = a.out {
        write_json(&out, &report)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Synth(a) => run_synth(a).map(|_| true),
        Command::Train(a) => run_train(a).map(|_| true),
        Command::Eval(a) => run_eval(a).map(|_| true),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Ablate(a) => run_ablate(a).map(|_| true),
        Command::Report(a) => run_report(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
