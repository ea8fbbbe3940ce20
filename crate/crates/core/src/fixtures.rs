//! Procedural scenes: smooth or speckle-textured elliptical "berries" on a
//! background, with exact fixture masks. Used by the test suites, the CLI
//! smoke runs and the browser demo.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imgcore::{ImageGray, ImageRgb};
use crate::io::save_rgb;
use crate::masks::{encode_maskset, Generator, MaskSet, SegMask};
use crate::pipeline::{mask_manifest_path, DatasetManifest, ManifestEntry};
use crate::tuner::Label;

/// One elliptical segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Berry {
    pub center: (f64, f64),
    /// Semi-axes along and across `angle`.
    pub radii: (f64, f64),
    /// Orientation of the first semi-axis, radians.
    pub angle: f64,
    pub color: [u8; 3],
    /// Peak darkening of the speckle texture; 0 for a smooth berry.
    pub speckle: f64,
}

impl Berry {
    pub fn smooth(center: (f64, f64), radii: (f64, f64), angle: f64, color: [u8; 3]) -> Self {
        Self {
            center,
            radii,
            angle,
            color,
            speckle: 0.0,
        }
    }

    pub fn textured(mut self, speckle: f64) -> Self {
        self.speckle = speckle;
        self
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let u = (c * dx + s * dy) / self.radii.0;
        let v = (-s * dx + c * dy) / self.radii.1;
        u * u + v * v <= 1.0
    }
}

/// Renders berries in order (later ones on top) and returns the image with
/// one mask per berry, ids `b00`, `b01`, ... Berries fully hidden by later
/// ones are omitted from the mask set.
pub fn render_scene(
    width: usize,
    height: usize,
    background: [u8; 3],
    berries: &[Berry],
    seed: u64,
    source_image: &str,
) -> (ImageRgb, MaskSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = ImageRgb::filled(width, height, background).expect("non-empty canvas");
    let mut owner = vec![usize::MAX; width * height];
    for (k, b) in berries.iter().enumerate() {
        for y in 0..height {
            for x in 0..width {
                if !b.contains(x as f64, y as f64) {
                    continue;
                }
                owner[y * width + x] = k;
                // Gentle shading keeps smooth berries free of strong edges.
                let (dx, dy) = (
                    (x as f64 - b.center.0) / b.radii.0.max(1.0),
                    (y as f64 - b.center.1) / b.radii.1.max(1.0),
                );
                let shade = 1.0 - 0.08 * (dx * dx + dy * dy).min(1.0);
                let dark = if b.speckle > 0.0 && rng.random_bool(0.3) {
                    b.speckle * rng.random_range(0.5..1.0)
                } else {
                    0.0
                };
                let rgb = b
                    .color
                    .map(|c| (f64::from(c) * shade - dark).round().clamp(0.0, 255.0) as u8);
                img.put(x, y, rgb);
            }
        }
    }
    let masks = (0..berries.len())
        .filter_map(|k| {
            let bits: Vec<bool> = owner.iter().map(|&o| o == k).collect();
            SegMask::from_bitmap(width, height, &bits, format!("b{k:02}"), source_image)
                .expect("bitmap matches canvas")
        })
        .collect();
    let set = MaskSet::new(source_image, width, height, Generator::Fixture, masks)
        .expect("fixture masks share the canvas");
    (img, set)
}

/// A grid of similar berries with jittered size and orientation; the berry
/// at `textured_index` (if any) gets speckle of the given amplitude.
pub fn bunch_scene(
    width: usize,
    height: usize,
    seed: u64,
    textured_index: Option<usize>,
    speckle: f64,
    source_image: &str,
) -> (ImageRgb, MaskSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let cell = (width.min(height) / 4).max(16) as f64;
    let cols = (width as f64 / cell).floor() as usize;
    let rows = (height as f64 / cell).floor() as usize;
    let mut berries = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let center = (
                (c as f64 + 0.5) * cell + rng.random_range(-0.05..0.05) * cell,
                (r as f64 + 0.5) * cell + rng.random_range(-0.05..0.05) * cell,
            );
            let major = cell * rng.random_range(0.36..0.44);
            let minor = major * rng.random_range(0.7..0.9);
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let g = rng.random_range(150..200u8);
            let mut b = Berry::smooth(center, (major, minor), angle, [g / 2, g, g / 3]);
            if textured_index == Some(berries.len()) {
                b = b.textured(speckle);
            }
            berries.push(b);
        }
    }
    render_scene(width, height, [30, 40, 25], &berries, seed, source_image)
}

/// A grayscale patch for the tuner: a few smooth discs on a shaded
/// background with mild noise, plus speckle inside the discs when
/// `speckle > 0`.
pub fn texture_patch(size: usize, speckle: f64, seed: u64) -> ImageGray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let discs: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.2..0.8) * size as f64,
                rng.random_range(0.2..0.8) * size as f64,
                rng.random_range(0.12..0.2) * size as f64,
            )
        })
        .collect();
    let mut pixels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let mut v = 60.0 + 30.0 * (x as f64 / size as f64);
            let inside = discs.iter().any(|&(cx, cy, r)| {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                dx * dx + dy * dy <= r * r
            });
            if inside {
                v = 170.0;
                if speckle > 0.0 && rng.random_bool(0.25) {
                    v -= speckle * rng.random_range(0.5..1.0);
                }
            }
            v += rng.random_range(-1.0..1.0);
            pixels.push(v.clamp(0.0, 255.0));
        }
    }
    ImageGray::new(size, size, pixels).expect("finite intensities in range")
}

/// Shape of a corpus written by [`write_corpus`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusSpec {
    pub normal: usize,
    pub anomalous: usize,
    /// Square image side.
    pub size: usize,
    pub seed: u64,
    pub speckle: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            normal: 20,
            anomalous: 10,
            size: 128,
            seed: 0,
            speckle: 90.0,
        }
    }
}

/// Directory layout of a written corpus, relative to its root.
pub const CORPUS_IMAGES: &str = "images";
pub const CORPUS_MASKS: &str = "masks";
pub const CORPUS_MANIFEST: &str = "manifest.json";

/// Writes bunch scenes as PNGs under `images/`, their fixture masks under
/// `masks/` and a dataset manifest at `manifest.json`. Anomalous scenes get
/// one speckled berry. Every image is its own source group.
pub fn write_corpus(root: &Path, spec: &CorpusSpec) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    let scenes = (0..spec.normal)
        .map(|i| (format!("normal_{i:03}"), Label::Normal, None))
        .chain((0..spec.anomalous).map(|i| (format!("anomalous_{i:03}"), Label::Anomalous, Some(i))));
    for (k, (name, label, textured)) in scenes.enumerate() {
        let rel = format!("{CORPUS_IMAGES}/{name}.png");
        let seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(k as u64);
        let textured = textured.map(|i| (i * 7 + spec.seed as usize) % 16);
        let (img, masks) = bunch_scene(spec.size, spec.size, seed, textured, spec.speckle, &rel);
        write_image_and_masks(root, &rel, &img, &masks)?;
        entries.push(ManifestEntry {
            path: rel,
            label,
            source_image_group: name,
            fold: None,
        });
    }
    let manifest = DatasetManifest::new(entries)?;
    manifest.save(&root.join(CORPUS_MANIFEST))?;
    Ok(manifest)
}

/// Saves `img` at `root/rel` and `masks` where the pipeline looks for them.
pub fn write_image_and_masks(root: &Path, rel: &str, img: &ImageRgb, masks: &MaskSet) -> Result<()> {
    save_rgb(&root.join(rel), img)?;
    let path = mask_manifest_path(&root.join(CORPUS_MASKS), rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&path, encode_maskset(masks)).map_err(|e| Error::io(&path, e))
}
