//! Binary segmentation masks stored as row-major run-length encodings, the
//! per-image mask manifest codec, and the mask utilities the generator
//! needs: area filtering, intersection, erosion, and a crude Otsu-based
//! segmenter for running without an external model.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::imgcore::{to_grayscale, ImageRgb};

/// One run of foreground pixels over the row-major pixel index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Run {
    pub start: usize,
    pub len: usize,
}

impl Run {
    pub fn new(start: usize, len: usize) -> Self {
        Self { start, len }
    }

    #[inline]
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// Axis-aligned box, `x1`/`y1` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
}

/// A non-empty binary segment of one source image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask {
    width: usize,
    height: usize,
    runs: Vec<Run>,
    area: usize,
    mask_id: String,
    source_image: String,
}

impl SegMask {
    /// Validates and normalizes `runs`: they must be sorted, non-overlapping,
    /// non-empty and inside the raster. Touching runs are merged.
    pub fn new(
        width: usize,
        height: usize,
        runs: Vec<Run>,
        mask_id: impl Into<String>,
        source_image: impl Into<String>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions { width, height });
        }
        let total = width * height;
        let mut merged: Vec<Run> = Vec::with_capacity(runs.len());
        for run in runs {
            if run.len == 0 {
                return Err(Error::InvalidMask(format!("zero-length run at {}", run.start)));
            }
            if run.end() > total {
                return Err(Error::InvalidMask(format!(
                    "run ({}, {}) exceeds raster of {total} pixels",
                    run.start, run.len
                )));
            }
            match merged.last_mut() {
                Some(last) if run.start < last.end() => {
                    return Err(Error::InvalidMask(format!(
                        "run ({}, {}) overlaps or precedes the previous run",
                        run.start, run.len
                    )));
                }
                Some(last) if run.start == last.end() => last.len += run.len,
                _ => merged.push(run),
            }
        }
        let area: usize = merged.iter().map(|r| r.len).sum();
        if area == 0 {
            return Err(Error::InvalidMask("mask has no foreground pixels".into()));
        }
        Ok(Self {
            width,
            height,
            runs: merged,
            area,
            mask_id: mask_id.into(),
            source_image: source_image.into(),
        })
    }

    /// Encodes a dense row-major bitmap. `None` when no pixel is set.
    pub fn from_bitmap(
        width: usize,
        height: usize,
        bits: &[bool],
        mask_id: impl Into<String>,
        source_image: impl Into<String>,
    ) -> Result<Option<Self>> {
        if bits.len() != width * height {
            return Err(Error::BufferLength {
                expected: width * height,
                actual: bits.len(),
            });
        }
        let runs = runs_from_bits(bits);
        if runs.is_empty() {
            return Ok(None);
        }
        Self::new(width, height, runs, mask_id, source_image).map(Some)
    }

    /// Convenience constructor from a predicate; errors when it selects nothing.
    pub fn from_fn(
        width: usize,
        height: usize,
        mask_id: impl Into<String>,
        source_image: impl Into<String>,
        f: impl Fn(usize, usize) -> bool,
    ) -> Result<Self> {
        let bits: Vec<bool> = (0..width * height).map(|i| f(i % width, i / width)).collect();
        Self::from_bitmap(width, height, &bits, mask_id, source_image)?
            .ok_or_else(|| Error::InvalidMask("predicate selects no pixels".into()))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    pub fn mask_id(&self) -> &str {
        &self.mask_id
    }

    pub fn source_image(&self) -> &str {
        &self.source_image
    }

    pub fn with_id(mut self, mask_id: impl Into<String>) -> Self {
        self.mask_id = mask_id.into();
        self
    }

    pub fn with_source(mut self, source_image: impl Into<String>) -> Self {
        self.source_image = source_image.into();
        self
    }

    /// Number of foreground pixels; always at least one.
    pub fn area(&self) -> usize {
        self.area
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let idx = y * self.width + x;
        let pos = self.runs.partition_point(|r| r.start <= idx);
        pos > 0 && idx < self.runs[pos - 1].end()
    }

    /// Foreground pixel coordinates in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.runs
            .iter()
            .flat_map(move |r| (r.start..r.end()).map(move |i| (i % w, i / w)))
    }

    pub fn to_bitmap(&self) -> Vec<bool> {
        let mut bits = vec![false; self.width * self.height];
        for r in &self.runs {
            bits[r.start..r.end()].iter_mut().for_each(|b| *b = true);
        }
        bits
    }

    pub fn bbox(&self) -> BBox {
        let w = self.width;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for r in &self.runs {
            let (first_row, last_row) = (r.start / w, (r.end() - 1) / w);
            y0 = y0.min(first_row);
            y1 = y1.max(last_row + 1);
            if first_row == last_row {
                x0 = x0.min(r.start % w);
                x1 = x1.max((r.end() - 1) % w + 1);
            } else {
                x0 = 0;
                x1 = w;
            }
        }
        BBox { x0, y0, x1, y1 }
    }

    /// Whether any foreground pixel lies on the outermost raster ring.
    pub fn touches_border(&self) -> bool {
        let b = self.bbox();
        b.x0 == 0 || b.y0 == 0 || b.x1 == self.width || b.y1 == self.height
    }
}

fn runs_from_bits(bits: &[bool]) -> Vec<Run> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < bits.len() {
        if bits[i] {
            let start = i;
            while i < bits.len() && bits[i] {
                i += 1;
            }
            runs.push(Run::new(start, i - start));
        } else {
            i += 1;
        }
    }
    runs
}

/// Where a mask set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    ExternalModel,
    Fallback,
    Fixture,
}

/// All segments of one image, kept sorted by `mask_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    source_image: String,
    width: usize,
    height: usize,
    generator: Generator,
    masks: Vec<SegMask>,
    metadata: Option<serde_json::Value>,
}

impl MaskSet {
    /// Masks adopt `source_image` and are kept sorted by id.
    pub fn new(
        source_image: impl Into<String>,
        width: usize,
        height: usize,
        generator: Generator,
        mut masks: Vec<SegMask>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions { width, height });
        }
        if let Some(m) = masks.iter().find(|m| m.dims() != (width, height)) {
            return Err(Error::DimensionMismatch {
                left: (width, height),
                right: m.dims(),
            });
        }
        let source_image = source_image.into();
        for m in &mut masks {
            if m.source_image != source_image {
                m.source_image = source_image.clone();
            }
        }
        masks.sort_by(|a, b| a.mask_id.cmp(&b.mask_id));
        if let Some(pair) = masks.windows(2).find(|p| p[0].mask_id == p[1].mask_id) {
            return Err(Error::InvalidMask(format!(
                "duplicate mask_id {:?}",
                pair[0].mask_id
            )));
        }
        Ok(Self {
            source_image,
            width,
            height,
            generator,
            masks,
            metadata: None,
        })
    }

    pub fn with_metadata(mut self, metadata: serde_json::Value) -> Self {
        self.metadata = Some(metadata);
        self
    }

    pub fn source_image(&self) -> &str {
        &self.source_image
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn generator(&self) -> Generator {
        self.generator
    }

    pub fn masks(&self) -> &[SegMask] {
        &self.masks
    }

    pub fn metadata(&self) -> Option<&serde_json::Value> {
        self.metadata.as_ref()
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn get(&self, mask_id: &str) -> Option<&SegMask> {
        self.masks
            .binary_search_by(|m| m.mask_id.as_str().cmp(mask_id))
            .ok()
            .map(|i| &self.masks[i])
    }

    fn with_masks(&self, masks: Vec<SegMask>) -> Self {
        Self {
            masks,
            ..self.clone()
        }
    }
}

/// Keeps the larger half of the masks by area, then only those whose area
/// strictly exceeds the mean area of the whole input set.
///
/// The half is rounded up. Equal areas are ranked by set order. The result
/// may be empty.
pub fn filter_masks(set: &MaskSet) -> MaskSet {
    let n = set.masks.len();
    if n == 0 {
        return set.clone();
    }
    let mean = set.masks.iter().map(|m| m.area as f64).sum::<f64>() / n as f64;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| set.masks[b].area.cmp(&set.masks[a].area));
    let mut keep = vec![false; n];
    for &i in order.iter().take(n.div_ceil(2)) {
        keep[i] = set.masks[i].area as f64 > mean;
    }
    let masks = set
        .masks
        .iter()
        .zip(keep)
        .filter_map(|(m, k)| k.then(|| m.clone()))
        .collect();
    set.with_masks(masks)
}

/// Run-wise intersection. `Ok(None)` when the masks do not overlap.
pub fn intersect(a: &SegMask, b: &SegMask) -> Result<Option<SegMask>> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    let mut runs = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.runs.len() && j < b.runs.len() {
        let (ra, rb) = (a.runs[i], b.runs[j]);
        let start = ra.start.max(rb.start);
        let end = ra.end().min(rb.end());
        if start < end {
            runs.push(Run::new(start, end - start));
        }
        if ra.end() <= rb.end() {
            i += 1;
        } else {
            j += 1;
        }
    }
    if runs.is_empty() {
        return Ok(None);
    }
    SegMask::new(a.width, a.height, runs, a.mask_id.clone(), a.source_image.clone()).map(Some)
}

/// Erosion by a `(2r+1) x (2r+1)` square. Pixels outside the raster count
/// as background. `None` when nothing survives.
pub fn erode(mask: &SegMask, radius: usize) -> Option<SegMask> {
    if radius == 0 {
        return Some(mask.clone());
    }
    let (w, h) = mask.dims();
    let bits = mask.to_bitmap();
    let horizontal = erode_lines(&bits, w, h, radius, true);
    let both = erode_lines(&horizontal, w, h, radius, false);
    SegMask::from_bitmap(w, h, &both, mask.mask_id.clone(), mask.source_image.clone())
        .expect("bitmap built with mask dimensions")
}

fn erode_lines(bits: &[bool], w: usize, h: usize, r: usize, along_rows: bool) -> Vec<bool> {
    let (lines, len) = if along_rows { (h, w) } else { (w, h) };
    let index = |line: usize, pos: usize| {
        if along_rows {
            line * w + pos
        } else {
            pos * w + line
        }
    };
    let mut out = vec![false; bits.len()];
    let mut prefix = vec![0usize; len + 1];
    for line in 0..lines {
        for pos in 0..len {
            prefix[pos + 1] = prefix[pos] + usize::from(bits[index(line, pos)]);
        }
        for pos in r..len.saturating_sub(r) {
            if prefix[pos + r + 1] - prefix[pos - r] == 2 * r + 1 {
                out[index(line, pos)] = true;
            }
        }
    }
    out
}

/// Otsu threshold over the 256-bin luminance histogram; foreground is
/// `luminance > threshold`. Returns 255 when the histogram has one class.
pub fn otsu_threshold(histogram: &[u64; 256]) -> u8 {
    let total: u64 = histogram.iter().sum();
    let sum_all: f64 = histogram
        .iter()
        .enumerate()
        .map(|(v, &c)| v as f64 * c as f64)
        .sum();
    let (mut w0, mut sum0) = (0u64, 0.0);
    let mut best: Option<(f64, u8)> = None;
    for t in 0..256usize {
        w0 += histogram[t];
        sum0 += t as f64 * histogram[t] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if best.map_or(true, |(b, _)| between > b) {
            best = Some((between, t as u8));
        }
    }
    best.map_or(255, |(_, t)| t)
}

/// Otsu binarization followed by 8-connected component labeling. Components
/// smaller than `min_area` are dropped.
pub fn segment_fallback(img: &ImageRgb, source_image: &str, min_area: usize) -> MaskSet {
    let gray = to_grayscale(img);
    let (w, h) = gray.dims();
    let lum: Vec<u8> = gray.as_slice().iter().map(|v| v.round() as u8).collect();
    let mut hist = [0u64; 256];
    lum.iter().for_each(|&v| hist[v as usize] += 1);
    let t = otsu_threshold(&hist);
    let fg: Vec<bool> = lum.iter().map(|&v| v > t).collect();

    let mut seen = vec![false; w * h];
    let mut masks = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..w * h {
        if !fg[seed] || seen[seed] {
            continue;
        }
        seen[seed] = true;
        queue.push_back(seed);
        let mut component = vec![false; w * h];
        let mut count = 0;
        while let Some(i) = queue.pop_front() {
            component[i] = true;
            count += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if fg[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        if count >= min_area.max(1) {
            let id = format!("fb-{:04}", masks.len());
            if let Ok(Some(m)) = SegMask::from_bitmap(w, h, &component, id, source_image) {
                masks.push(m);
            }
        }
    }
    MaskSet::new(source_image, w, h, Generator::Fallback, masks)
        .expect("components share the image raster and have unique ids")
}

pub const MASK_SCHEMA_VERSION: u32 = 1;

/// Malformed mask manifest: byte offset into the payload and what was wrong.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("mask manifest invalid at byte {offset}: {reason}")]
pub struct CodecError {
    pub offset: usize,
    pub reason: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    schema_version: u32,
    source_image: String,
    width: usize,
    height: usize,
    generator: Generator,
    masks: Vec<MaskDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskDoc {
    mask_id: String,
    area: usize,
    runs: Vec<[usize; 2]>,
}

/// Canonical compact JSON: masks sorted by id, runs sorted and merged.
pub fn encode_maskset(set: &MaskSet) -> Vec<u8> {
    let doc = ManifestDoc {
        schema_version: MASK_SCHEMA_VERSION,
        source_image: set.source_image.clone(),
        width: set.width,
        height: set.height,
        generator: set.generator,
        masks: set
            .masks
            .iter()
            .map(|m| MaskDoc {
                mask_id: m.mask_id.clone(),
                area: m.area,
                runs: m.runs.iter().map(|r| [r.start, r.len]).collect(),
            })
            .collect(),
        metadata: set.metadata.clone(),
    };
    serde_json::to_vec(&doc).expect("manifest serialization is infallible")
}

pub fn decode_maskset(bytes: &[u8]) -> Result<MaskSet, CodecError> {
    let doc: ManifestDoc = serde_json::from_slice(bytes).map_err(|e| CodecError {
        offset: byte_offset(bytes, e.line(), e.column()),
        reason: e.to_string(),
    })?;
    if doc.schema_version != MASK_SCHEMA_VERSION {
        return Err(CodecError {
            offset: find_offset(bytes, "schema_version"),
            reason: format!("unsupported schema_version {}", doc.schema_version),
        });
    }
    let mut masks = Vec::with_capacity(doc.masks.len());
    let mut ids = BTreeSet::new();
    for m in doc.masks {
        let at = find_offset(bytes, &format!("\"{}\"", m.mask_id));
        if !ids.insert(m.mask_id.clone()) {
            return Err(CodecError {
                offset: at,
                reason: format!("duplicate mask_id {:?}", m.mask_id),
            });
        }
        let runs = m.runs.iter().map(|r| Run::new(r[0], r[1])).collect();
        let mask = SegMask::new(doc.width, doc.height, runs, m.mask_id, doc.source_image.clone())
            .map_err(|e| CodecError {
                offset: at,
                reason: e.to_string(),
            })?;
        if mask.area != m.area {
            return Err(CodecError {
                offset: at,
                reason: format!(
                    "mask {:?} declares area {} but its runs cover {}",
                    mask.mask_id, m.area, mask.area
                ),
            });
        }
        masks.push(mask);
    }
    let set = MaskSet::new(doc.source_image, doc.width, doc.height, doc.generator, masks)
        .map_err(|e| CodecError {
            offset: 0,
            reason: e.to_string(),
        })?;
    Ok(match doc.metadata {
        Some(meta) => set.with_metadata(meta),
        None => set,
    })
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line <= 1 {
        return column.saturating_sub(1).min(bytes.len());
    }
    let line_start = bytes
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == b'\n')
        .nth(line - 2)
        .map_or(bytes.len(), |(i, _)| i + 1);
    (line_start + column.saturating_sub(1)).min(bytes.len())
}

fn find_offset(bytes: &[u8], needle: &str) -> usize {
    let needle = needle.as_bytes();
    bytes
        .windows(needle.len().max(1))
        .position(|w| w == needle)
        .unwrap_or(0)
}
