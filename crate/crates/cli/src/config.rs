//! Run configuration: an optional TOML file overlaid by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use berrysmith_core::blend::GammaMode;
use berrysmith_core::edges::BoundaryGuard;
use berrysmith_core::pipeline::GenerationConfig;
use berrysmith_core::tuner::GridSpec;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub log_level: Option<String>,
    pub paths: PathsSection,
    pub grid: GridSection,
    pub tune: TuneSection,
    pub generation: GenerationSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub dataset_root: Option<PathBuf>,
    pub mask_root: Option<PathBuf>,
    pub output_root: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub threshold_values: Option<Vec<f64>>,
    pub kernel_sizes: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneSection {
    pub top_m: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationSection {
    pub n_syn: Option<usize>,
    pub min_overlap: Option<f64>,
    pub overlap_guard: Option<bool>,
    pub gamma_mode: Option<GammaMode>,
    pub boundary_guard: Option<BoundaryGuard>,
    pub one_image_per_paste: Option<bool>,
    pub fallback_masks: Option<bool>,
    pub min_area: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

/// Settings shared by all commands after merging file and flags.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset_root: Option<PathBuf>,
    pub mask_root: Option<PathBuf>,
    pub output_root: Option<PathBuf>,
    pub grid: GridSpec,
    pub top_m: usize,
    pub generation: GenerationConfig,
    pub fallback_masks: bool,
    pub min_area: usize,
    pub workers: usize,
    pub seed: u64,
}

pub const DEFAULT_TOP_M: usize = 25;
pub const DEFAULT_MIN_AREA: usize = 100;

/// Flags that override the file; `None` leaves the file's value.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub dataset_root: Option<PathBuf>,
    pub mask_root: Option<PathBuf>,
    pub output_root: Option<PathBuf>,
    pub threshold_values: Option<Vec<f64>>,
    pub kernel_sizes: Option<Vec<usize>>,
    pub top_m: Option<usize>,
    pub n_syn: Option<usize>,
    pub min_overlap: Option<f64>,
    pub overlap_guard: Option<bool>,
    pub gamma_mode: Option<GammaMode>,
    pub boundary_guard: Option<BoundaryGuard>,
    pub one_image_per_paste: Option<bool>,
    pub fallback_masks: Option<bool>,
    pub min_area: Option<usize>,
}

impl RunConfig {
    pub fn merge(file: FileConfig, flags: Overrides) -> Result<Self, CliError> {
        let defaults = GridSpec::default();
        let grid = GridSpec {
            threshold_values: flags
                .threshold_values
                .or(file.grid.threshold_values)
                .unwrap_or(defaults.threshold_values),
            kernel_sizes: flags
                .kernel_sizes
                .or(file.grid.kernel_sizes)
                .unwrap_or(defaults.kernel_sizes),
        };
        grid.validate().map_err(|e| CliError::Usage(e.to_string()))?;

        let seed = flags.seed.or(file.seed).unwrap_or(0);
        let g = file.generation;
        let base = GenerationConfig::default();
        let generation = GenerationConfig {
            n_syn: flags.n_syn.or(g.n_syn).unwrap_or(base.n_syn),
            min_overlap: flags.min_overlap.or(g.min_overlap).unwrap_or(base.min_overlap),
            seed,
            gamma_mode: flags.gamma_mode.or(g.gamma_mode).unwrap_or(base.gamma_mode),
            overlap_guard: flags
                .overlap_guard
                .or(g.overlap_guard)
                .unwrap_or(base.overlap_guard),
            boundary_guard: flags
                .boundary_guard
                .or(g.boundary_guard)
                .unwrap_or(base.boundary_guard),
            one_image_per_paste: flags
                .one_image_per_paste
                .or(g.one_image_per_paste)
                .unwrap_or(base.one_image_per_paste),
        };
        generation
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;

        let workers = flags
            .workers
            .or(file.workers)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if workers == 0 {
            return Err(CliError::Usage("workers must be at least 1".into()));
        }
        let top_m = flags.top_m.or(file.tune.top_m).unwrap_or(DEFAULT_TOP_M);
        if top_m == 0 {
            return Err(CliError::Usage("top-m must be at least 1".into()));
        }
        Ok(Self {
            dataset_root: flags.dataset_root.or(file.paths.dataset_root),
            mask_root: flags.mask_root.or(file.paths.mask_root),
            output_root: flags.output_root.or(file.paths.output_root),
            grid,
            top_m,
            generation,
            fallback_masks: flags.fallback_masks.or(g.fallback_masks).unwrap_or(false),
            min_area: flags.min_area.or(g.min_area).unwrap_or(DEFAULT_MIN_AREA),
            workers,
            seed,
        })
    }

    pub fn output_root(&self) -> Result<&Path, CliError> {
        self.output_root
            .as_deref()
            .ok_or_else(|| CliError::Usage("--output-root is required for this command".into()))
    }

    /// The dataset root, defaulting to the directory holding `manifest`.
    pub fn dataset_root_for(&self, manifest: &Path) -> PathBuf {
        self.dataset_root.clone().unwrap_or_else(|| {
            manifest
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("."))
        })
    }
}
