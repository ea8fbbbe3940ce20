use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use berrysmith_core::blend::guidance_plane;
use berrysmith_core::edges::dced;
use berrysmith_core::imgcore::{to_grayscale, ImageGray};
use berrysmith_core::io::{load_rgb, save_edge_map, save_gray};
use berrysmith_core::masks::{self, decode_maskset, encode_maskset};
use berrysmith_core::pipeline::{
    augment_manifest, generate_dataset, mask_manifest_path, split_folds, write_outputs,
    AugmentMode, DatasetJob, DatasetManifest, GenerationOutput, MaskSource, PasteFailure,
    Rejection,
};
use berrysmith_core::tuner::{
    classify_baseline, evaluate, select_by_validation, tune as tune_grid, Label, Metrics,
    TunedDced,
};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub const MODEL_FILE: &str = "tuned_dced.json";
pub const REPORT_FILE: &str = "tune_report.csv";
pub const REJECTIONS_FILE: &str = "rejections.jsonl";
pub const METRICS_FILE: &str = "metrics.json";

fn data_err(path: &Path, what: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {what}", path.display()))
}

fn load_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    if !path.is_file() {
        return Err(data_err(path, "manifest not found"));
    }
    Ok(DatasetManifest::load(path)?)
}

fn load_model(path: &Path) -> Result<TunedDced, CliError> {
    let bytes = fs::read(path).map_err(|e| data_err(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| data_err(path, e))
}

fn require_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(data_err(path, format!("{what} is not a directory")))
    }
}

/// `name` joined under `root`, refusing anything that would escape it.
fn under(root: &Path, name: &Path) -> Result<PathBuf, CliError> {
    if name
        .components()
        .all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
    {
        Ok(root.join(name))
    } else {
        Err(CliError::Usage(format!(
            "{} must be a relative path inside the output root",
            name.display()
        )))
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| data_err(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| data_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn load_patches(
    root: &Path,
    manifest: &DatasetManifest,
) -> Result<Vec<(ImageGray, Label)>, CliError> {
    manifest
        .entries
        .par_iter()
        .map(|e| Ok((to_grayscale(&load_rgb(&root.join(&e.path))?), e.label)))
        .collect()
}

fn require_folds(manifest: &DatasetManifest, path: &Path) -> Result<(), CliError> {
    if manifest.entries.iter().any(|e| e.fold.is_none()) {
        return Err(data_err(path, "entries without a fold; run `split` first"));
    }
    Ok(())
}

#[derive(Serialize)]
struct ReportRow {
    kernel_size: usize,
    wth_min: f64,
    wth_max: f64,
    nth_min: f64,
    nth_max: f64,
    count_threshold: f64,
    train_balanced_accuracy: f64,
}

pub fn tune(cfg: &RunConfig, manifest_path: &Path, val_fold: Option<usize>) -> Result<(), CliError> {
    let manifest = load_manifest(manifest_path)?;
    let root = cfg.dataset_root_for(manifest_path);
    require_dir(&root, "dataset root")?;
    let out = cfg.output_root()?;
    let (train, val) = match val_fold {
        Some(f) => {
            require_folds(&manifest, manifest_path)?;
            (manifest.select_fold(f, false), Some(manifest.select_fold(f, true)))
        }
        None => (manifest, None),
    };
    let patches = load_patches(&root, &train)?;
    info!("tuning on {} patches", patches.len());
    let report = tune_grid(&patches, &cfg.grid)?;
    let model = match val {
        Some(v) => select_by_validation(&report, &load_patches(&root, &v)?, &cfg.grid, cfg.top_m)?,
        None => report.best,
    };

    write_json(&out.join(MODEL_FILE), &model)?;
    let report_path = out.join(REPORT_FILE);
    let mut csv = csv::Writer::from_writer(Vec::new());
    for c in &report.candidates {
        csv.serialize(ReportRow {
            kernel_size: c.params.kernel_size,
            wth_min: c.params.wide.th_min,
            wth_max: c.params.wide.th_max,
            nth_min: c.params.narrow.th_min,
            nth_max: c.params.narrow.th_max,
            count_threshold: c.separator.threshold,
            train_balanced_accuracy: c.separator.balanced_accuracy,
        })
        .map_err(|e| data_err(&report_path, e))?;
    }
    let bytes = csv.into_inner().map_err(|e| data_err(&report_path, e))?;
    write_bytes(&report_path, &bytes)?;

    let p = model.params;
    print!(
        "K={} wide=({}, {}) narrow=({}, {}) count_threshold={} train_ba={:.4}",
        p.kernel_size,
        p.wide.th_min,
        p.wide.th_max,
        p.narrow.th_min,
        p.narrow.th_max,
        model.count_threshold,
        model.train_balanced_accuracy
    );
    match model.val_balanced_accuracy {
        Some(v) => println!(" val_ba={v:.4}"),
        None => println!(),
    }
    Ok(())
}

pub struct GenerateOptions {
    pub manifest: PathBuf,
    pub model: PathBuf,
    pub exclude_fold: Option<usize>,
    pub dump_blend: bool,
}

pub fn generate(cfg: &RunConfig, opts: &GenerateOptions) -> Result<(), CliError> {
    let mut manifest = load_manifest(&opts.manifest)?;
    if let Some(f) = opts.exclude_fold {
        require_folds(&manifest, &opts.manifest)?;
        manifest = manifest.select_fold(f, false);
    }
    let model = load_model(&opts.model)?;
    let root = cfg.dataset_root_for(&opts.manifest);
    require_dir(&root, "dataset root")?;
    let masks = match (&cfg.mask_root, cfg.fallback_masks) {
        (Some(r), fallback) => {
            require_dir(r, "mask root")?;
            MaskSource::Directory {
                root: r.clone(),
                fallback_min_area: fallback.then_some(cfg.min_area),
            }
        }
        (None, true) => MaskSource::Fallback {
            min_area: cfg.min_area,
        },
        (None, false) => {
            return Err(CliError::Usage(
                "--mask-root or --fallback-masks is required".into(),
            ))
        }
    };
    let out_root = cfg.output_root()?;
    let inputs = manifest.count(Label::Anomalous);

    let out = generate_dataset(DatasetJob {
        manifest: &manifest,
        dataset_root: &root,
        masks: &masks,
        tuned: &model,
        cfg: &cfg.generation,
        workers: cfg.workers,
    })?;
    write_outputs(&out, out_root)?;
    let mut lines = Vec::new();
    for r in &out.rejections {
        writeln!(lines, "{}", serde_json::to_string(r).expect("serializable")).expect("in memory");
    }
    write_bytes(&out_root.join(REJECTIONS_FILE), &lines)?;
    if opts.dump_blend {
        dump_blend(&out, out_root)?;
    }

    println!(
        "generated {} synthetic images ({} pastes) from {} anomalous inputs; rejected {}",
        out.files.len(),
        out.records.len(),
        inputs,
        out.rejections.len()
    );
    for (reason, n) in rejection_reasons(&out) {
        println!("  {reason}: {n}");
    }
    if inputs > 0 && out.files.is_empty() {
        return Err(CliError::Data(format!(
            "no synthetic images generated from {inputs} anomalous inputs"
        )));
    }
    Ok(())
}

/// Counts of rejection codes, and of paste failure codes inside them.
fn rejection_reasons(out: &GenerationOutput) -> BTreeMap<String, usize> {
    let code = |v: serde_json::Value, key: &str| -> String {
        v.get(key)
            .and_then(|c| c.as_str())
            .unwrap_or("unknown")
            .to_string()
    };
    let mut counts = BTreeMap::new();
    for r in &out.rejections {
        let tag = code(serde_json::to_value(&r.rejection).expect("serializable"), "code");
        *counts.entry(tag).or_default() += 1;
        if let Rejection::AllPastesFailed { failures } = &r.rejection {
            for f in failures {
                let mut tag = code(serde_json::to_value(f).expect("serializable"), "code");
                if let PasteFailure::Paste(p) = f {
                    tag = format!("{tag}/{}", code(serde_json::to_value(p).expect("serializable"), "reason"));
                }
                *counts.entry(format!("  paste {tag}")).or_default() += 1;
            }
        }
    }
    counts
}

fn dump_blend(out: &GenerationOutput, out_root: &Path) -> Result<(), CliError> {
    out.files.par_iter().try_for_each(|f| {
        let (w, h) = f.image.dims();
        let mut guidance = vec![0.0; w * h];
        let mut region = vec![0.0; w * h];
        for m in &f.pasted {
            // Inside a converged region the output's Laplacian is the
            // guidance field's.
            let g = guidance_plane(&f.image, m)?;
            for (i, v) in g.as_slice().iter().enumerate() {
                guidance[i] = f64::max(guidance[i], *v);
            }
            for (x, y) in m.pixels() {
                region[y * w + x] = 255.0;
            }
        }
        let stem = Path::new("debug").join(Path::new(&f.path).strip_prefix("synthetic").unwrap_or(Path::new(&f.path)));
        let base = out_root.join(stem.with_extension(""));
        let name = |suffix: &str| PathBuf::from(format!("{}_{suffix}.png", base.display()));
        save_gray(&name("guidance"), &ImageGray::new(w, h, guidance)?)?;
        save_gray(&name("region"), &ImageGray::new(w, h, region)?)?;
        Ok(())
    })
}

pub fn split(cfg: &RunConfig, manifest_path: &Path, k: usize, output: &Path) -> Result<(), CliError> {
    let manifest = load_manifest(manifest_path)?;
    let out = under(cfg.output_root()?, output)?;
    let split = split_folds(&manifest, k, cfg.seed).map_err(|e| data_err(manifest_path, e))?;
    split.save(&out)?;
    for f in 0..k {
        let fold = split.select_fold(f, true);
        println!(
            "fold {f}: {} normal, {} anomalous",
            fold.count(Label::Normal),
            fold.count(Label::Anomalous)
        );
    }
    Ok(())
}

pub fn augment(
    cfg: &RunConfig,
    real_path: &Path,
    synthetic_path: &Path,
    mode: AugmentMode,
    pct: f64,
    output: Option<&Path>,
) -> Result<(), CliError> {
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(CliError::Usage(format!("--pct must be in (0, 100], got {pct}")));
    }
    let real = load_manifest(real_path)?;
    let synthetic = load_manifest(synthetic_path)?;
    let mode_name = match mode {
        AugmentMode::Addition => "addition",
        AugmentMode::Substitution => "substitution",
    };
    let default_name = PathBuf::from(format!("augmented_{mode_name}_{pct}.json"));
    let out = under(cfg.output_root()?, output.unwrap_or(&default_name))?;
    let merged = augment_manifest(&real, &synthetic, mode, pct, cfg.seed)?;
    merged.save(&out)?;
    println!(
        "{} entries ({} normal, {} anomalous) -> {}",
        merged.entries.len(),
        merged.count(Label::Normal),
        merged.count(Label::Anomalous),
        out.display()
    );
    Ok(())
}

/// Metrics under the column names used in result tables.
#[derive(Serialize)]
struct MetricsDoc<'a> {
    #[serde(rename = "Balanced Acc.")]
    balanced_accuracy: f64,
    #[serde(rename = "F1-Score")]
    f1: f64,
    #[serde(rename = "Precision")]
    precision: f64,
    #[serde(rename = "Recall")]
    recall: f64,
    tp: usize,
    tn: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    undefined: &'a [String],
}

impl<'a> From<&'a Metrics> for MetricsDoc<'a> {
    fn from(m: &'a Metrics) -> Self {
        Self {
            balanced_accuracy: m.balanced_accuracy,
            f1: m.f1,
            precision: m.precision,
            recall: m.recall,
            tp: m.tp,
            tn: m.tn,
            fp: m.fp,
            fn_: m.fn_,
            undefined: &m.undefined,
        }
    }
}

pub fn classify(
    cfg: &RunConfig,
    manifest_path: &Path,
    model_path: &Path,
    fold: Option<usize>,
    dump_edges: bool,
) -> Result<(), CliError> {
    let mut manifest = load_manifest(manifest_path)?;
    if let Some(f) = fold {
        require_folds(&manifest, manifest_path)?;
        manifest = manifest.select_fold(f, true);
    }
    let model = load_model(model_path)?;
    let root = cfg.dataset_root_for(manifest_path);
    require_dir(&root, "dataset root")?;
    let edge_root = if dump_edges {
        Some(cfg.output_root()?.join("edges"))
    } else {
        None
    };
    let predictions: Vec<Label> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let patch = to_grayscale(&load_rgb(&root.join(&e.path))?);
            if let Some(dir) = &edge_root {
                let r = dced(&patch, &model.params)?;
                let base = dir.join(Path::new(&e.path).with_extension(""));
                for (name, map) in [("wide", &r.wide), ("narrow", &r.narrow), ("diff", &r.diff)] {
                    save_edge_map(&PathBuf::from(format!("{}_{name}.png", base.display())), map)?;
                }
            }
            Ok(classify_baseline(&patch, &model)?)
        })
        .collect::<Result<_, CliError>>()?;
    let truths: Vec<Label> = manifest.entries.iter().map(|e| e.label).collect();
    let metrics = evaluate(&predictions, &truths).map_err(|e| data_err(manifest_path, e))?;
    let doc = MetricsDoc::from(&metrics);
    println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
    if let Some(out) = &cfg.output_root {
        write_json(&out.join(METRICS_FILE), &doc)?;
    }
    Ok(())
}

pub fn segment_fallback(cfg: &RunConfig, manifest_path: &Path) -> Result<(), CliError> {
    let manifest = load_manifest(manifest_path)?;
    let root = cfg.dataset_root_for(manifest_path);
    require_dir(&root, "dataset root")?;
    let out = cfg.output_root()?;
    let counts: Vec<usize> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let img = load_rgb(&root.join(&e.path))?;
            let set = masks::segment_fallback(&img, &e.path, cfg.min_area);
            write_bytes(&mask_manifest_path(out, &e.path), &encode_maskset(&set))?;
            Ok(set.len())
        })
        .collect::<Result<_, CliError>>()?;
    println!(
        "wrote {} mask manifests with {} masks",
        counts.len(),
        counts.iter().sum::<usize>()
    );
    Ok(())
}

pub fn masks_validate(files: &[PathBuf]) -> Result<(), CliError> {
    let mut invalid = 0;
    for path in files {
        match validate_one(path) {
            Ok(n) => println!("ok {} ({n} masks)", path.display()),
            Err(reason) => {
                invalid += 1;
                println!("invalid {}: {reason}", path.display());
            }
        }
    }
    if invalid > 0 {
        return Err(CliError::Data(format!(
            "{invalid} of {} mask manifests invalid",
            files.len()
        )));
    }
    Ok(())
}

/// Decodes `path` and checks it is in canonical form, ignoring trailing
/// whitespace.
fn validate_one(path: &Path) -> Result<usize, String> {
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    let set = decode_maskset(&bytes).map_err(|e| e.to_string())?;
    let trimmed = bytes.trim_ascii_end();
    let canonical = encode_maskset(&set);
    if trimmed != canonical.as_slice() {
        let at = trimmed
            .iter()
            .zip(&canonical)
            .position(|(a, b)| a != b)
            .unwrap_or(trimmed.len().min(canonical.len()));
        return Err(format!("not in canonical form (first difference at byte {at})"));
    }
    Ok(set.len())
}
