use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rawlid::audio::{load_manifest, ManifestEntry};
use rawlid::config::RunConfig;
use rawlid::embedding::{
    extract_embeddings, parse_embeddings_tsv, tsne_2d, write_embeddings_tsv, write_projection_tsv, EmbeddingError,
    TsneConfig,
};
use rawlid::model::{Checkpoint, Frontend, Variant};
use rawlid::synthdata::{generate_dataset, SynthSpec};
use rawlid::training::{evaluate, train_to_dir, TrainError};

/// Spoken language identification from raw audio.
#[derive(Parser)]
#[command(name = "rawlid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-class corpus with train/eval manifests.
    Synth(SynthArgs),
    /// Train a model and write checkpoints plus per-epoch metrics.
    Train(TrainArgs),
    /// Score a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Export projection-layer embeddings as TSV.
    Embed(EmbedArgs),
    /// Project an embedding TSV to two dimensions with t-SNE.
    Tsne(TsneArgs),
    /// Print the effective run configuration as JSON.
    ShowConfig(ShowConfigArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 50)]
    clips_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise level in [0, 1].
    #[arg(long, default_value_t = 0.2)]
    difficulty: f64,
    /// Shortest clip in seconds.
    #[arg(long, default_value_t = 4.0)]
    min_seconds: f64,
    /// Longest clip in seconds.
    #[arg(long, default_value_t = 6.0)]
    max_seconds: f64,
    /// Share of each class held out for evaluation.
    #[arg(long, default_value_t = 0.2)]
    eval_fraction: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Resnet,
    ResnetLstm,
    ResnetLstmMha,
}

#[derive(Clone, Copy, ValueEnum)]
enum FrontendArg {
    Raw,
    Mfcc,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train_manifest: Option<PathBuf>,
    #[arg(long)]
    eval_manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long, value_enum)]
    frontend: Option<FrontendArg>,
    /// Training crop length in seconds.
    #[arg(long)]
    segment_seconds: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Directory for checkpoints and logs.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Also write the report as JSON here.
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Output TSV.
    #[arg(long)]
    out: PathBuf,
    /// Centre-crop length; defaults to the checkpoint's training length.
    #[arg(long)]
    segment_seconds: Option<f64>,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
}

#[derive(Args)]
struct TsneArgs {
    /// Embedding TSV written by `embed`.
    #[arg(long)]
    embeddings: PathBuf,
    /// Output TSV with x, y, label, path columns.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ShowConfigArgs {
    /// Show this file merged over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(String),
    Divergence(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Divergence(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Divergence(m) => m,
        }
    }
}

fn data(e: impl Display) -> Failure {
    Failure::Data(e.to_string())
}

fn usage(e: impl Display) -> Failure {
    Failure::Usage(e.to_string())
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => usage(e),
            TrainError::Divergence { .. } => Failure::Divergence(e.to_string()),
            _ => data(e),
        }
    }
}

impl From<EmbeddingError> for Failure {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::InvalidConfig(_) => usage(e),
            _ => data(e),
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn manifest(path: &Path) -> Result<Vec<ManifestEntry>, Failure> {
    load_manifest(path).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))
        }
    }
}

fn cmd_synth(a: SynthArgs) -> Result<(), Failure> {
    let spec = SynthSpec {
        num_classes: a.classes,
        clips_per_class: a.clips_per_class,
        min_seconds: a.min_seconds,
        max_seconds: a.max_seconds,
        seed: a.seed,
        difficulty: a.difficulty,
        eval_fraction: a.eval_fraction,
    };
    let errs = spec.validate();
    if !errs.is_empty() {
        return Err(usage(errs.join("; ")));
    }
    let s = generate_dataset(&spec, &a.out).map_err(data)?;
    println!(
        "wrote {} training and {} evaluation clips to {}",
        s.train.len(),
        s.eval.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(v) = a.variant {
        cfg.model.variant = match v {
            VariantArg::Resnet => Variant::Resnet,
            VariantArg::ResnetLstm => Variant::ResnetLstm,
            VariantArg::ResnetLstmMha => Variant::ResnetLstmMha,
        };
    }
    if let Some(f) = a.frontend {
        cfg.model.frontend = match f {
            FrontendArg::Raw => Frontend::Raw,
            FrontendArg::Mfcc => Frontend::Mfcc,
        };
    }
    if let Some(s) = a.segment_seconds {
        cfg.train.segment_seconds = s;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    cfg.paths.train_manifest = a.train_manifest.or(cfg.paths.train_manifest);
    cfg.paths.eval_manifest = a.eval_manifest.or(cfg.paths.eval_manifest);
    cfg.paths.out_dir = a.out.or(cfg.paths.out_dir);

    let mut errs = cfg.validate();
    if cfg.paths.train_manifest.is_none() {
        errs.push("a training manifest is required (--train-manifest or paths.train_manifest)".into());
    }
    if cfg.paths.out_dir.is_none() {
        errs.push("an output directory is required (--out or paths.out_dir)".into());
    }
    if !errs.is_empty() {
        return Err(usage(format!("invalid configuration:\n  {}", errs.join("\n  "))));
    }
    let out = cfg.paths.out_dir.clone().expect("checked");
    let train = manifest(cfg.paths.train_manifest.as_deref().expect("checked"))?;
    let eval = cfg.paths.eval_manifest.as_deref().map(manifest).transpose()?;
    fs::create_dir_all(&out).map_err(|e| data(format!("{}: {e}", out.display())))?;
    write(&out.join("config.json"), cfg.to_json_pretty())?;
    let outcome = train_to_dir(&out, &train, eval.as_deref(), &cfg.model, &cfg.mfcc, &cfg.train)?;
    if outcome.skipped > 0 {
        eprintln!("warning: {} unreadable training files were skipped", outcome.skipped);
    }
    let last = outcome.history.last().expect("at least one epoch");
    match (last.eval_macro_f1, &outcome.best) {
        (Some(f1), Some(best)) => println!(
            "final eval macro-F1 {f1:.4} (best {:.4} at epoch {})",
            best.macro_f1, best.epoch
        ),
        _ => println!("final train loss {:.4}, train accuracy {:.4}", last.loss, last.train_acc),
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    if a.batch_size == 0 {
        return Err(usage("--batch-size must be at least 1"));
    }
    let ck = load_checkpoint(&a.ckpt)?;
    let entries = manifest(&a.manifest)?;
    let report = evaluate(&ck, &entries, a.batch_size)?;
    println!("{}", report.table());
    if let Some(p) = &a.report_out {
        write(p, serde_json::to_string_pretty(&report).expect("report serialises") + "\n")?;
    }
    Ok(())
}

fn cmd_embed(a: EmbedArgs) -> Result<(), Failure> {
    if a.batch_size == 0 {
        return Err(usage("--batch-size must be at least 1"));
    }
    if let Some(s) = a.segment_seconds.filter(|s| !(*s > 0.0 && *s <= 600.0)) {
        return Err(usage(format!("--segment-seconds must lie in (0, 600], got {s}")));
    }
    let ck = load_checkpoint(&a.ckpt)?;
    let entries = manifest(&a.manifest)?;
    let set = extract_embeddings(&ck, &entries, a.segment_seconds, a.batch_size)?;
    write(&a.out, write_embeddings_tsv(&set)?)?;
    println!("wrote {} x {} embeddings to {}", set.len(), set.dim(), a.out.display());
    Ok(())
}

fn cmd_tsne(a: TsneArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.embeddings).map_err(|e| data(format!("{}: {e}", a.embeddings.display())))?;
    let set = parse_embeddings_tsv(&text).map_err(|e| data(format!("{}: {e}", a.embeddings.display())))?;
    let cfg = TsneConfig {
        perplexity: a.perplexity,
        iterations: a.iterations,
        seed: a.seed,
        ..TsneConfig::default()
    };
    let out = tsne_2d(&set.vectors, &cfg)?;
    write(&a.out, write_projection_tsv(&out.coords, &set)?)?;
    if let Some((it, kl)) = out.kl_history.last() {
        log::info!("KL divergence {kl:.6} after {} iterations", it + 1);
    }
    println!("wrote {} points to {}", set.len(), a.out.display());
    Ok(())
}

fn cmd_show_config(a: ShowConfigArgs) -> Result<(), Failure> {
    let cfg = load_config(a.config.as_deref())?;
    println!("{}", cfg.to_json_pretty());
    let errs = cfg.validate();
    if errs.is_empty() {
        Ok(())
    } else {
        Err(usage(format!("invalid configuration:\n  {}", errs.join("\n  "))))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Tsne(a) => cmd_tsne(a),
        Command::ShowConfig(a) => cmd_show_config(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
