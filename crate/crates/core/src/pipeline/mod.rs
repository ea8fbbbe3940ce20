//! Synthetic sample generation: pick the most textured segments of an
//! anomalous image, align each onto a randomly chosen segment of a normal
//! image, and blend it in.

mod dataset;
mod manifest;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blend::{
    compute_alignment, paste_region, poisson_blend, warp, BlendError, GammaMode, PasteRejection,
};
use crate::edges::{masked_edge_stats, BoundaryGuard, DcedParams, MaskedEdgeStats, MAGNITUDE_SCALE};
use crate::error::{Error, Result};
use crate::imgcore::{to_grayscale, ImageRgb};
use crate::masks::{intersect, MaskSet, SegMask};

pub use dataset::{
    generate_dataset, mask_manifest_path, write_outputs, DatasetJob, GenerationOutput,
    MaskSource, SampleRejection, RECORDS_FILE, SYNTHETIC_DIR, SYNTHETIC_MANIFEST_FILE,
};
pub use manifest::{
    augment_manifest, percentage_count, split_folds, AugmentMode, DatasetManifest,
    ManifestEntry, MANIFEST_SCHEMA_VERSION,
};

/// Destination resamples allowed after a rejected paste.
pub const MAX_RESAMPLES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// Segments pasted per synthetic sample.
    pub n_syn: usize,
    pub min_overlap: f64,
    pub seed: u64,
    pub gamma_mode: GammaMode,
    pub overlap_guard: bool,
    pub boundary_guard: BoundaryGuard,
    /// Emit one image per paste instead of accumulating all pastes.
    pub one_image_per_paste: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            n_syn: 1,
            min_overlap: 0.5,
            seed: 0,
            gamma_mode: GammaMode::SqrtArea,
            overlap_guard: true,
            boundary_guard: BoundaryGuard::Eroded,
            one_image_per_paste: false,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_syn == 0 {
            return Err(Error::InvalidArgument("n_syn must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_overlap) {
            return Err(Error::InvalidArgument(format!(
                "min_overlap must be in [0, 1], got {}",
                self.min_overlap
            )));
        }
        Ok(())
    }
}

/// Provenance of one paste.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRecord {
    pub output_path: String,
    pub source_anomalous_image: String,
    pub source_mask_id: String,
    pub destination_image: String,
    pub destination_mask_id: String,
    pub paste_index: usize,
    pub edge_ratio: f64,
    pub gamma: f64,
    pub linear_scale: f64,
    pub phi: f64,
    pub signed_rotation: f64,
    pub overlap_ratio: f64,
    /// Largest final relative residual over the three channels.
    pub poisson_residual: f64,
    pub seed_stream: String,
    pub dced_params_used: DcedParams,
    pub blur_sigma: f64,
    pub magnitude_scale: f64,
    pub boundary_guard: BoundaryGuard,
    pub gamma_mode: GammaMode,
    pub overlap_guard: bool,
    pub normal_pairing: String,
}

/// A segment with its dual-filter statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedMask {
    pub mask: SegMask,
    pub stats: MaskedEdgeStats,
}

/// The `n` masks with the highest edge ratio, descending; ties by mask id.
pub fn select_edgiest(
    masks: &MaskSet,
    img: &ImageRgb,
    params: &DcedParams,
    n: usize,
    guard: BoundaryGuard,
) -> Result<Vec<RankedMask>> {
    if masks.is_empty() {
        return Err(Error::EmptyInput("no masks to rank"));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let gray = to_grayscale(img);
    let mut ranked = masks
        .masks()
        .iter()
        .map(|m| {
            Ok(RankedMask {
                stats: masked_edge_stats(&gray, m, params, guard)?,
                mask: m.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| {
        b.stats
            .edge_ratio
            .total_cmp(&a.stats.edge_ratio)
            .then_with(|| a.mask.mask_id().cmp(b.mask.mask_id()))
    });
    ranked.truncate(n);
    Ok(ranked)
}

/// Why a single paste attempt failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum PasteFailure {
    DegenerateMask { detail: String },
    OffCanvas,
    Paste(PasteRejection),
    RegionOnBorder,
    Blend { detail: String },
}

/// Why a whole sample produced nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum Rejection {
    NoSourceMasks,
    NoDestinationMasks,
    AllPastesFailed { failures: Vec<PasteFailure> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    pub image: ImageRgb,
    /// `output_path` is left empty for the caller to fill.
    pub records: Vec<SyntheticRecord>,
    /// Union of blended regions; everything else equals the normal image.
    pub pasted: Vec<SegMask>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleOutcome {
    Generated(Vec<SyntheticImage>),
    Rejected(Rejection),
}

/// Seed of the random stream for one anomalous input, independent of the
/// order inputs are processed in.
pub fn derive_seed(master_seed: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

/// Inputs for one synthetic sample. Mask sets must already be filtered.
#[derive(Debug, Clone, Copy)]
pub struct SamplePair<'a> {
    pub bad_img: &'a ImageRgb,
    pub bad_masks: &'a MaskSet,
    pub good_img: &'a ImageRgb,
    pub good_masks: &'a MaskSet,
}

/// Pastes the `n_syn` most textured source segments onto uniformly sampled
/// destination segments.
///
/// Destinations are drawn without replacement while enough exist. A failed
/// paste is retried with up to [`MAX_RESAMPLES`] other destinations, then
/// that source segment is skipped. When fewer source segments than `n_syn`
/// exist they are reused in rank order.
pub fn generate_sample<R: Rng>(
    pair: SamplePair<'_>,
    cfg: &GenerationConfig,
    params: &DcedParams,
    seed_stream: &str,
    rng: &mut R,
) -> Result<SampleOutcome> {
    cfg.validate()?;
    if pair.bad_masks.is_empty() {
        return Ok(SampleOutcome::Rejected(Rejection::NoSourceMasks));
    }
    if pair.good_masks.is_empty() {
        return Ok(SampleOutcome::Rejected(Rejection::NoDestinationMasks));
    }
    let sources = select_edgiest(
        pair.bad_masks,
        pair.bad_img,
        params,
        cfg.n_syn,
        cfg.boundary_guard,
    )?;
    let good = pair.good_masks.masks();
    let without_replacement = good.len() >= cfg.n_syn;
    let mut used = vec![false; good.len()];
    let (cw, ch) = pair.good_img.dims();
    let interior = SegMask::from_fn(cw, ch, "interior", "", |x, y| {
        x > 0 && y > 0 && x + 1 < cw && y + 1 < ch
    })
    .ok();

    let mut failures = Vec::new();
    let mut images: Vec<SyntheticImage> = Vec::new();
    let mut current = SyntheticImage {
        image: pair.good_img.clone(),
        records: Vec::new(),
        pasted: Vec::new(),
    };

    for paste_index in 0..cfg.n_syn {
        let source = &sources[paste_index % sources.len()];
        let mut tried = vec![false; good.len()];
        for _attempt in 0..=MAX_RESAMPLES {
            let pool: Vec<usize> = {
                let fresh: Vec<usize> = (0..good.len())
                    .filter(|&i| !tried[i] && !(without_replacement && used[i]))
                    .collect();
                if !fresh.is_empty() {
                    fresh
                } else {
                    let untried: Vec<usize> = (0..good.len()).filter(|&i| !tried[i]).collect();
                    if untried.is_empty() {
                        (0..good.len()).collect()
                    } else {
                        untried
                    }
                }
            };
            let d = pool[rng.random_range(0..pool.len())];
            tried[d] = true;
            let base = if cfg.one_image_per_paste {
                pair.good_img
            } else {
                &current.image
            };
            match paste_one(pair.bad_img, source, &good[d], base, interior.as_ref(), cfg)? {
                Ok((blended, region, t, overlap_ratio, poisson_residual)) => {
                    used[d] = true;
                    let record = SyntheticRecord {
                        output_path: String::new(),
                        source_anomalous_image: pair.bad_masks.source_image().to_string(),
                        source_mask_id: source.mask.mask_id().to_string(),
                        destination_image: pair.good_masks.source_image().to_string(),
                        destination_mask_id: good[d].mask_id().to_string(),
                        paste_index,
                        edge_ratio: source.stats.edge_ratio,
                        gamma: t.gamma,
                        linear_scale: t.linear_scale,
                        phi: t.phi,
                        signed_rotation: t.signed_rotation,
                        overlap_ratio,
                        poisson_residual,
                        seed_stream: seed_stream.to_string(),
                        dced_params_used: *params,
                        blur_sigma: params.sigma(),
                        magnitude_scale: MAGNITUDE_SCALE,
                        boundary_guard: cfg.boundary_guard,
                        gamma_mode: cfg.gamma_mode,
                        overlap_guard: cfg.overlap_guard,
                        normal_pairing: "sampled_per_anomalous_image".into(),
                    };
                    if cfg.one_image_per_paste {
                        images.push(SyntheticImage {
                            image: blended,
                            records: vec![record],
                            pasted: vec![region],
                        });
                    } else {
                        current.image = blended;
                        current.records.push(record);
                        current.pasted.push(region);
                    }
                    break;
                }
                Err(f) => failures.push(f),
            }
        }
    }
    if !cfg.one_image_per_paste && !current.records.is_empty() {
        images.push(current);
    }
    Ok(if images.is_empty() {
        SampleOutcome::Rejected(Rejection::AllPastesFailed { failures })
    } else {
        SampleOutcome::Generated(images)
    })
}

type PasteSuccess = (ImageRgb, SegMask, crate::blend::AlignmentTransform, f64, f64);

fn paste_one(
    bad_img: &ImageRgb,
    source: &RankedMask,
    dst_mask: &SegMask,
    base: &ImageRgb,
    interior: Option<&SegMask>,
    cfg: &GenerationConfig,
) -> Result<std::result::Result<PasteSuccess, PasteFailure>> {
    let t = match compute_alignment(&source.mask, dst_mask, cfg.gamma_mode) {
        Ok(t) => t,
        Err(e @ Error::MaskTooSmall(_)) => {
            return Ok(Err(PasteFailure::DegenerateMask {
                detail: e.to_string(),
            }))
        }
        Err(e) => return Err(e),
    };
    let (cw, ch) = base.dims();
    let (warped, warped_mask) = warp(bad_img, &source.mask, &t, cw, ch)?;
    let Some(warped_mask) = warped_mask else {
        return Ok(Err(PasteFailure::OffCanvas));
    };
    let min_overlap = cfg.overlap_guard.then_some(cfg.min_overlap);
    let region = match paste_region(&warped_mask, dst_mask, min_overlap)? {
        Ok(r) => r,
        Err(rej) => return Ok(Err(PasteFailure::Paste(rej))),
    };
    let clipped = match interior {
        Some(inner) => intersect(&region.region, inner)?,
        None => None,
    };
    let Some(clipped) = clipped else {
        return Ok(Err(PasteFailure::RegionOnBorder));
    };
    match poisson_blend(base, &warped, &clipped) {
        Ok(out) => {
            let residual = out.residuals.into_iter().fold(0.0, f64::max);
            Ok(Ok((out.image, clipped, t, region.overlap_ratio, residual)))
        }
        Err(e @ (BlendError::NotConverged { .. } | BlendError::RegionTouchesBorder)) => {
            Ok(Err(PasteFailure::Blend {
                detail: e.to_string(),
            }))
        }
        Err(e) => Err(Error::InvalidArgument(e.to_string())),
    }
}
