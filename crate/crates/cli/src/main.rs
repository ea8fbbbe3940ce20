//! `berrysmith`: batch runs of the synthetic anomaly pipeline.

mod commands;
mod config;
mod error;

use std::panic;
use std::path::PathBuf;
use std::process::ExitCode;

use berrysmith_core::blend::GammaMode;
use berrysmith_core::edges::BoundaryGuard;
use berrysmith_core::pipeline::AugmentMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{FileConfig, Overrides, RunConfig};
use crate::error::{CliError, EXIT_INTERNAL};

#[derive(Debug, Parser)]
#[command(name = "berrysmith", version, about = "Synthetic anomaly generation for fruit imagery")]
struct Cli {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory manifest paths are relative to (default: the manifest's directory).
    #[arg(long, global = true)]
    dataset_root: Option<PathBuf>,
    /// Directory holding `<image>.masks.json` files mirroring the dataset.
    #[arg(long, global = true)]
    mask_root: Option<PathBuf>,
    /// Directory every output is written under.
    #[arg(long, global = true)]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Grid-search the dual edge filter on labeled patches.
    Tune(TuneArgs),
    /// Paste textured segments of anomalous images onto normal images.
    Generate(GenerateArgs),
    /// Assign grouped, stratified cross-validation folds.
    Split(SplitArgs),
    /// Mix synthetic entries into a real manifest.
    Augment(AugmentArgs),
    /// Evaluate the edge-count baseline classifier.
    Classify(ClassifyArgs),
    /// Segment images with the built-in Otsu fallback.
    SegmentFallback(SegmentArgs),
    /// Check mask manifest files for validity and canonical form.
    MasksValidate(ValidateArgs),
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Hold this fold out for validation re-ranking.
    #[arg(long)]
    val_fold: Option<usize>,
    /// Training candidates re-ranked on the validation fold.
    #[arg(long)]
    top_m: Option<usize>,
    /// Comma-separated threshold grid values.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// Comma-separated blur kernel sizes.
    #[arg(long, value_delimiter = ',')]
    kernels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GammaArg {
    SqrtArea,
    Literal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GuardArg {
    Eroded,
    None,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Tuned filter model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Use only entries outside this fold.
    #[arg(long)]
    exclude_fold: Option<usize>,
    /// Segments pasted per synthetic image.
    #[arg(long)]
    n_syn: Option<usize>,
    /// Minimum fraction of the destination segment the paste must cover.
    #[arg(long)]
    min_overlap: Option<f64>,
    /// Accept pastes regardless of overlap.
    #[arg(long)]
    no_overlap_guard: bool,
    #[arg(long, value_enum)]
    gamma_mode: Option<GammaArg>,
    /// Which segment pixels count towards edge ratios.
    #[arg(long, value_enum)]
    boundary_guard: Option<GuardArg>,
    /// Write one image per paste instead of accumulating them.
    #[arg(long)]
    one_image_per_paste: bool,
    /// Segment images without a mask manifest with the fallback segmenter.
    #[arg(long)]
    fallback_masks: bool,
    /// Smallest fallback segment kept.
    #[arg(long)]
    min_area: Option<usize>,
    /// Also write guidance and region planes under `debug/`.
    #[arg(long)]
    dump_blend: bool,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, short = 'k', default_value_t = 3)]
    folds: usize,
    /// File name under the output root.
    #[arg(long, default_value = "folds.json")]
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Addition,
    Substitution,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    synthetic: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Percentage in (0, 100].
    #[arg(long)]
    pct: f64,
    /// File name under the output root (default: augmented_<mode>_<pct>.json).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Evaluate only this fold.
    #[arg(long)]
    fold: Option<usize>,
    /// Write wide, narrow and difference edge maps under `edges/`.
    #[arg(long)]
    dump_edges: bool,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    min_area: Option<usize>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

impl Cli {
    fn overrides(&self) -> Overrides {
        let mut o = Overrides {
            seed: self.seed,
            workers: self.workers,
            dataset_root: self.dataset_root.clone(),
            mask_root: self.mask_root.clone(),
            output_root: self.output_root.clone(),
            ..Overrides::default()
        };
        match &self.command {
            Command::Tune(a) => {
                o.top_m = a.top_m;
                o.threshold_values = a.thresholds.clone();
                o.kernel_sizes = a.kernels.clone();
            }
            Command::Generate(a) => {
                o.n_syn = a.n_syn;
                o.min_overlap = a.min_overlap;
                o.overlap_guard = a.no_overlap_guard.then_some(false);
                o.gamma_mode = a.gamma_mode.map(|g| match g {
                    GammaArg::SqrtArea => GammaMode::SqrtArea,
                    GammaArg::Literal => GammaMode::Literal,
                });
                o.boundary_guard = a.boundary_guard.map(|g| match g {
                    GuardArg::Eroded => BoundaryGuard::Eroded,
                    GuardArg::None => BoundaryGuard::None,
                });
                o.one_image_per_paste = a.one_image_per_paste.then_some(true);
                o.fallback_masks = a.fallback_masks.then_some(true);
                o.min_area = a.min_area;
            }
            Command::SegmentFallback(a) => o.min_area = a.min_area,
            _ => {}
        }
        o
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let log_level = file.log_level.clone();
    let cfg = RunConfig::merge(file, cli.overrides())?;
    let mut logger = env_logger::Builder::new();
    logger.filter_level(log::LevelFilter::Warn);
    if let Some(level) = log_level {
        logger.parse_filters(&level);
    }
    if let Ok(spec) = std::env::var("BERRYSMITH_LOG") {
        logger.parse_filters(&spec);
    }
    let _ = logger.try_init();
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))?;

    match cli.command {
        Command::Tune(a) => commands::tune(&cfg, &a.manifest, a.val_fold),
        Command::Generate(a) => commands::generate(
            &cfg,
            &commands::GenerateOptions {
                manifest: a.manifest,
                model: a.model,
                exclude_fold: a.exclude_fold,
                dump_blend: a.dump_blend,
            },
        ),
        Command::Split(a) => commands::split(&cfg, &a.manifest, a.folds, &a.output),
        Command::Augment(a) => {
            let mode = match a.mode {
                ModeArg::Addition => AugmentMode::Addition,
                ModeArg::Substitution => AugmentMode::Substitution,
            };
            commands::augment(&cfg, &a.real, &a.synthetic, mode, a.pct, a.output.as_deref())
        }
        Command::Classify(a) => commands::classify(&cfg, &a.manifest, &a.model, a.fold, a.dump_edges),
        Command::SegmentFallback(a) => commands::segment_fallback(&cfg, &a.manifest),
        Command::MasksValidate(a) => commands::masks_validate(&a.files),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
