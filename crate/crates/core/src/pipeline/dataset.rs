use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestEntry};
use super::{derive_seed, generate_sample, GenerationConfig, Rejection, SampleOutcome, SamplePair, SyntheticRecord};
use crate::error::{Error, Result};
use crate::imgcore::ImageRgb;
use crate::io::{load_rgb, save_rgb};
use crate::masks::{decode_maskset, filter_masks, segment_fallback, MaskSet, SegMask};
use crate::tuner::{Label, TunedDced};

pub const SYNTHETIC_DIR: &str = "synthetic";
pub const SYNTHETIC_MANIFEST_FILE: &str = "synthetic_manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";

/// Where segment masks for the corpus images come from.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskSource {
    /// Mask manifests under `root`, mirroring the image paths
    /// (`img/a.png` -> `root/img/a.masks.json`). Images without one are
    /// segmented with the fallback segmenter when `fallback_min_area` is set.
    Directory {
        root: PathBuf,
        fallback_min_area: Option<usize>,
    },
    /// Fallback segmentation for every image.
    Fallback { min_area: usize },
}

/// Mask manifest location for an image path relative to the dataset root.
pub fn mask_manifest_path(mask_root: &Path, image_rel: &str) -> PathBuf {
    mask_root.join(Path::new(image_rel).with_extension("masks.json"))
}

impl MaskSource {
    fn load(&self, image_rel: &str, img: &ImageRgb) -> Result<MaskSet> {
        match self {
            MaskSource::Fallback { min_area } => Ok(segment_fallback(img, image_rel, *min_area)),
            MaskSource::Directory {
                root,
                fallback_min_area,
            } => {
                let path = mask_manifest_path(root, image_rel);
                match fs::read(&path) {
                    Ok(bytes) => {
                        let set = decode_maskset(&bytes).map_err(|e| Error::io(&path, e))?;
                        if set.dims() != img.dims() {
                            return Err(Error::io(
                                &path,
                                format!("masks are {:?}, image is {:?}", set.dims(), img.dims()),
                            ));
                        }
                        Ok(set)
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => match fallback_min_area {
                        Some(min_area) => Ok(segment_fallback(img, image_rel, *min_area)),
                        None => Err(Error::io(&path, "mask manifest missing and fallback disabled")),
                    },
                    Err(e) => Err(Error::io(&path, e)),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DatasetJob<'a> {
    pub manifest: &'a DatasetManifest,
    pub dataset_root: &'a Path,
    pub masks: &'a MaskSource,
    pub tuned: &'a TunedDced,
    pub cfg: &'a GenerationConfig,
    pub workers: usize,
}

/// One generated image, not yet written.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedFile {
    /// Relative to the output root.
    pub path: String,
    pub image: ImageRgb,
    pub destination_image: String,
    pub pasted: Vec<SegMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRejection {
    pub source_anomalous_image: String,
    pub destination_image: String,
    pub rejection: Rejection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutput {
    pub manifest: DatasetManifest,
    pub records: Vec<SyntheticRecord>,
    pub files: Vec<GeneratedFile>,
    pub rejections: Vec<SampleRejection>,
}

fn output_path(anomalous_rel: &str, index: Option<usize>) -> String {
    let stem = Path::new(anomalous_rel).with_extension("");
    let stem = stem.to_string_lossy().replace('\\', "/");
    match index {
        None => format!("{SYNTHETIC_DIR}/{stem}_syn.png"),
        Some(i) => format!("{SYNTHETIC_DIR}/{stem}_syn{i}.png"),
    }
}

enum ItemResult {
    Generated(Vec<(GeneratedFile, Vec<SyntheticRecord>, ManifestEntry)>),
    Rejected(SampleRejection),
}

/// One synthetic image per anomalous entry, each paired with a normal entry
/// sampled from that entry's own random stream.
///
/// Items are independent; results are assembled in manifest path order so
/// the output does not depend on `workers`.
pub fn generate_dataset(job: DatasetJob<'_>) -> Result<GenerationOutput> {
    job.cfg.validate()?;
    job.manifest.validate()?;
    let mut anomalous: Vec<&ManifestEntry> = job
        .manifest
        .entries
        .iter()
        .filter(|e| e.label == Label::Anomalous)
        .collect();
    let mut normal: Vec<&ManifestEntry> = job
        .manifest
        .entries
        .iter()
        .filter(|e| e.label == Label::Normal)
        .collect();
    anomalous.sort_by(|a, b| a.path.cmp(&b.path));
    normal.sort_by(|a, b| a.path.cmp(&b.path));
    if !anomalous.is_empty() && normal.is_empty() {
        return Err(Error::InvalidArgument(
            "manifest has anomalous entries but no normal entries to paste onto".into(),
        ));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(job.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let results: Vec<ItemResult> = pool.install(|| {
        anomalous
            .par_iter()
            .map(|entry| generate_item(&job, entry, &normal))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut files = Vec::new();
    let mut records = Vec::new();
    let mut entries = Vec::new();
    let mut rejections = Vec::new();
    for r in results {
        match r {
            ItemResult::Generated(items) => {
                for (file, recs, entry) in items {
                    files.push(file);
                    records.extend(recs);
                    entries.push(entry);
                }
            }
            ItemResult::Rejected(rej) => {
                warn!(
                    "rejected {} onto {}: {:?}",
                    rej.source_anomalous_image, rej.destination_image, rej.rejection
                );
                rejections.push(rej);
            }
        }
    }
    info!(
        "generated {} synthetic images from {} anomalous inputs, {} rejected",
        files.len(),
        anomalous.len(),
        rejections.len()
    );
    Ok(GenerationOutput {
        manifest: DatasetManifest::new(entries)?,
        records,
        files,
        rejections,
    })
}

fn generate_item(
    job: &DatasetJob<'_>,
    entry: &ManifestEntry,
    normal: &[&ManifestEntry],
) -> Result<ItemResult> {
    let seed = derive_seed(job.cfg.seed, &entry.path);
    let seed_stream = format!("{seed:016x}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let good_entry = normal[rng.random_range(0..normal.len())];

    let bad_img = load_rgb(&job.dataset_root.join(&entry.path))?;
    let good_img = load_rgb(&job.dataset_root.join(&good_entry.path))?;
    let bad_masks = filter_masks(&job.masks.load(&entry.path, &bad_img)?);
    let good_masks = filter_masks(&job.masks.load(&good_entry.path, &good_img)?);
    let pair = SamplePair {
        bad_img: &bad_img,
        bad_masks: &bad_masks,
        good_img: &good_img,
        good_masks: &good_masks,
    };
    let outcome = generate_sample(pair, job.cfg, &job.tuned.params, &seed_stream, &mut rng)?;
    Ok(match outcome {
        SampleOutcome::Rejected(rejection) => ItemResult::Rejected(SampleRejection {
            source_anomalous_image: entry.path.clone(),
            destination_image: good_entry.path.clone(),
            rejection,
        }),
        SampleOutcome::Generated(images) => {
            let per_paste = job.cfg.one_image_per_paste;
            let items = images
                .into_iter()
                .enumerate()
                .map(|(i, img)| {
                    let path = output_path(&entry.path, per_paste.then_some(i));
                    let records = img
                        .records
                        .into_iter()
                        .map(|r| SyntheticRecord {
                            output_path: path.clone(),
                            ..r
                        })
                        .collect();
                    let manifest_entry = ManifestEntry {
                        path: path.clone(),
                        label: Label::Anomalous,
                        source_image_group: entry.source_image_group.clone(),
                        fold: entry.fold,
                    };
                    let file = GeneratedFile {
                        path,
                        image: img.image,
                        destination_image: good_entry.path.clone(),
                        pasted: img.pasted,
                    };
                    (file, records, manifest_entry)
                })
                .collect();
            ItemResult::Generated(items)
        }
    })
}

/// Writes images, the synthetic manifest and the JSON-lines records under
/// `output_root`.
pub fn write_outputs(out: &GenerationOutput, output_root: &Path) -> Result<()> {
    for f in &out.files {
        save_rgb(&output_root.join(&f.path), &f.image)?;
    }
    out.manifest.save(&output_root.join(SYNTHETIC_MANIFEST_FILE))?;
    let path = output_root.join(RECORDS_FILE);
    let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for r in &out.records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(file, "{line}").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
