//! `cqpass`: per-shot constant-quality encoding. Splits video into shots,
//! extracts complexity features, trains two small networks to predict the
//! rate factor hitting a VMAF target, and drives the verify-and-correct
//! two-pass encode loop — against a synthetic oracle or real encoder and
//! quality-meter processes.

mod adapter;
mod artifacts;
mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use commands::{CommandStatus, PrecodeMode, SourceArgs};
use config::{read_config_file, ConfigError, Settings};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "cqpass",
    version,
    about = "Per-shot constant-quality encoding: predict the rate factor for a VMAF target, verify, correct once"
)]
struct Cli {
    /// TOML config file; command-line flags override its keys.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a reproducible synthetic segment corpus
    SynthCorpus(SynthCorpusArgs),
    /// Split a Y4M video at scene cuts and export each shot
    Segment(SegmentArgs),
    /// Extract one segment's feature vector into a cache file
    Features(FeaturesArgs),
    /// Search each segment for the RF that hits the quality target
    Label(LabelArgs),
    /// Train the pass-1 predictor or the pass-2 corrector
    Train(TrainArgs),
    /// Encode a corpus with the two-pass prediction loop
    Run(RunArgs),
    /// Single fixed-RF reference point for the whole corpus
    Baseline(BaselineArgs),
    /// Accuracy table (and histogram) from run results
    Report(ReportArgs),
}

/// The `--corpus` / `--manifest` segment-source pair shared by the
/// corpus-driven commands.
#[derive(Args)]
struct SourceFlags {
    /// Synthetic corpus file from `synth-corpus` (synthetic codec)
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// Segment manifest from `segment` (process codec)
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
}

impl SourceFlags {
    fn with_cache(self, features_cache: Option<PathBuf>) -> SourceArgs {
        SourceArgs { corpus: self.corpus, manifest: self.manifest, features_cache }
    }
}

#[derive(Args)]
struct SynthCorpusArgs {
    /// Output corpus file
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Number of segments
    #[arg(long, default_value_t = 500)]
    count: usize,
    /// Descriptor vector width
    #[arg(long, default_value_t = 8, value_name = "N")]
    dim: usize,
    /// Measurement noise standard deviation
    #[arg(long, default_value_t = 0.3, value_name = "SIGMA")]
    noise_sigma: f64,
    /// Corpus seed (overrides the configured seed)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SegmentArgs {
    /// Source video (Y4M)
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Directory for per-shot Y4M files and the manifest
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Scene-cut threshold on mean absolute luma difference
    #[arg(long, value_name = "DIFF")]
    scene_threshold: Option<f64>,
    /// Minimum shot length in frames
    #[arg(long, value_name = "FRAMES")]
    min_shot_len: Option<usize>,
}

#[derive(Args)]
struct FeaturesArgs {
    /// One segment (Y4M), e.g. an export from `segment`
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Feature cache to read and update
    #[arg(long, value_name = "FILE")]
    cache: PathBuf,
    /// Pre-coding stats source: `builtin` or `log:<stats.csv>`
    #[arg(long, default_value = "builtin", value_name = "MODE")]
    precode: PrecodeMode,
}

#[derive(Args)]
struct LabelArgs {
    #[command(flatten)]
    source: SourceFlags,
    /// Output label file
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Quality target the search aims for
    #[arg(long, value_name = "VMAF")]
    target_vmaf: Option<f64>,
    /// Acceptable |achieved − target| for convergence
    #[arg(long, value_name = "VMAF")]
    tol: Option<f64>,
    /// Iteration budget per segment (evaluations ≤ budget + 2)
    #[arg(long, value_name = "N")]
    max_iters: Option<usize>,
    /// Concurrent segment workers
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: SourceFlags,
    /// Feature cache from `features` (with --manifest)
    #[arg(long, value_name = "FILE")]
    features_cache: Option<PathBuf>,
    /// Label file from `label`
    #[arg(long, value_name = "FILE")]
    labels: PathBuf,
    /// Which model to train: 1 (predictor) or 2 (corrector)
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pass: u8,
    /// Where to write the trained model
    #[arg(long, value_name = "FILE")]
    model_out: PathBuf,
    /// Trained pass-1 model (required for --pass 2)
    #[arg(long, value_name = "FILE")]
    pass1_model: Option<PathBuf>,
    /// Hidden layer width
    #[arg(long, value_name = "N")]
    hidden: Option<usize>,
    /// Residual block count
    #[arg(long, value_name = "N")]
    blocks: Option<usize>,
    #[arg(long, value_name = "LR")]
    learning_rate: Option<f64>,
    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// Share of the corpus (in order) forming the pass-1 training pool
    #[arg(long, value_name = "FRACTION")]
    pass1_fraction: Option<f64>,
    /// Weight-init and shuffle seed
    #[arg(long)]
    seed: Option<u64>,
    /// Concurrent segment workers (pass-2 feedback measurement)
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: SourceFlags,
    /// Feature cache from `features` (with --manifest)
    #[arg(long, value_name = "FILE")]
    features_cache: Option<PathBuf>,
    /// Trained pass-1 model
    #[arg(long, value_name = "FILE")]
    model1: PathBuf,
    /// Trained pass-2 model
    #[arg(long, value_name = "FILE")]
    model2: PathBuf,
    /// Output results table
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Also measure accepted second passes (evaluation mode)
    #[arg(long)]
    measure_final: bool,
    #[arg(long, value_name = "VMAF")]
    target_vmaf: Option<f64>,
    /// Lower edge of the acceptance window
    #[arg(long, value_name = "VMAF")]
    window_low: Option<f64>,
    /// Upper edge of the acceptance window
    #[arg(long, value_name = "VMAF")]
    window_high: Option<f64>,
    /// Concurrent segment workers
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    source: SourceFlags,
    /// Output baseline file
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, value_name = "VMAF")]
    target_vmaf: Option<f64>,
    /// Mean-quality tolerance for the RF search
    #[arg(long, value_name = "VMAF")]
    tol: Option<f64>,
    /// RF search iteration budget
    #[arg(long, value_name = "N")]
    max_iters: Option<usize>,
    /// Concurrent segment workers
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Results table from `run`
    #[arg(long, value_name = "FILE")]
    results: PathBuf,
    /// Also write the report text here
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Also write a final-quality histogram here
    #[arg(long, value_name = "FILE")]
    histogram: Option<PathBuf>,
    #[arg(long, value_name = "VMAF")]
    target_vmaf: Option<f64>,
    /// Accuracy bands, e.g. --bands 1,2
    #[arg(long, value_delimiter = ',', num_args = 1.., value_name = "VMAF")]
    bands: Option<Vec<f64>>,
}

fn load_settings(config: &Option<PathBuf>) -> Result<Settings, ConfigError> {
    match config {
        Some(path) => read_config_file(path)?.into_settings(),
        None => Ok(Settings::default()),
    }
}

/// Applies a `--target-vmaf` override; when neither window flag moves, the
/// default ±1 window follows the target.
fn apply_target(s: &mut Settings, target: Option<f64>, low: Option<f64>, high: Option<f64>) {
    if let Some(t) = target {
        s.target_vmaf = t;
        if low.is_none() && high.is_none() {
            s.window_low = t - 1.0;
            s.window_high = t + 1.0;
        }
    }
    if let Some(l) = low {
        s.window_low = l;
    }
    if let Some(h) = high {
        s.window_high = h;
    }
}

macro_rules! override_opt {
    ($settings:expr, $($field:ident = $opt:expr),+ $(,)?) => {
        $(if let Some(v) = $opt { $settings.$field = v; })+
    };
}

fn dispatch(cli: Cli) -> anyhow::Result<CommandStatus> {
    let mut settings = load_settings(&cli.config)?;

    match cli.command {
        Command::SynthCorpus(a) => {
            override_opt!(settings, seed = a.seed);
            settings.validate()?;
            commands::synth_corpus(&settings, a.count, a.dim, a.noise_sigma, &a.out)?;
        }
        Command::Segment(a) => {
            override_opt!(
                settings,
                scene_threshold = a.scene_threshold,
                min_shot_len = a.min_shot_len,
            );
            settings.validate()?;
            commands::segment(&settings, &a.input, &a.out_dir)?;
        }
        Command::Features(a) => {
            commands::features(&a.input, &a.cache, &a.precode)?;
        }
        Command::Label(a) => {
            apply_target(&mut settings, a.target_vmaf, None, None);
            override_opt!(
                settings,
                label_tol = a.tol,
                label_max_iters = a.max_iters,
                workers = a.workers,
            );
            settings.validate()?;
            commands::label(&settings, &a.source.with_cache(None), &a.out)?;
        }
        Command::Train(a) => {
            override_opt!(
                settings,
                hidden = a.hidden,
                blocks = a.blocks,
                learning_rate = a.learning_rate,
                batch_size = a.batch_size,
                epochs = a.epochs,
                pass1_fraction = a.pass1_fraction,
                seed = a.seed,
                workers = a.workers,
            );
            settings.validate()?;
            commands::train(
                &settings,
                &a.source.with_cache(a.features_cache),
                &a.labels,
                a.pass,
                &a.model_out,
                a.pass1_model.as_deref(),
            )?;
        }
        Command::Run(a) => {
            apply_target(&mut settings, a.target_vmaf, a.window_low, a.window_high);
            override_opt!(settings, workers = a.workers);
            settings.validate()?;
            return commands::run(
                &settings,
                &a.source.with_cache(a.features_cache),
                &a.model1,
                &a.model2,
                &a.out,
                a.measure_final,
            );
        }
        Command::Baseline(a) => {
            apply_target(&mut settings, a.target_vmaf, None, None);
            override_opt!(
                settings,
                label_tol = a.tol,
                label_max_iters = a.max_iters,
                workers = a.workers,
            );
            settings.validate()?;
            commands::baseline(&settings, &a.source.with_cache(None), &a.out)?;
        }
        Command::Report(a) => {
            apply_target(&mut settings, a.target_vmaf, None, None);
            override_opt!(settings, bands = a.bands);
            settings.validate()?;
            commands::report(&settings, &a.results, a.out.as_deref(), a.histogram.as_deref())?;
        }
    }
    Ok(CommandStatus::Clean)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(CommandStatus::Clean) => ExitCode::SUCCESS,
        Ok(CommandStatus::PartialFailures(_)) => ExitCode::from(3),
        Err(err) => {
            eprintln!("error: {err:#}");
            let is_config = err.chain().any(|c| c.downcast_ref::<ConfigError>().is_some());
            ExitCode::from(if is_config { 2 } else { 1 })
        }
    }
}
