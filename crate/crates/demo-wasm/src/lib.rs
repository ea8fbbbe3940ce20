//! Browser demo over procedurally generated berry scenes.
//!
//! Three views, each returned as an RGBA [`Frame`] plus a JSON summary:
//! the dual edge filter on a generated or uploaded image, the alignment of
//! one elliptical segment onto another, and a full paste-and-blend sample.
//! The view functions are plain Rust; the `wasm_bindgen` exports below only
//! convert arguments and errors.

use berrysmith_core::blend::{compute_alignment, warp, GammaMode};
use berrysmith_core::edges::{dced, BoundaryGuard, DcedParams};
use berrysmith_core::fixtures::{bunch_scene, render_scene, Berry};
use berrysmith_core::imgcore::{principal_axis, to_grayscale, ImageRgb};
use berrysmith_core::masks::{filter_masks, MaskSet, SegMask};
use berrysmith_core::pipeline::{
    generate_sample, select_edgiest, GenerationConfig, SampleOutcome, SamplePair,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Filter settings used to rank segments in the blend view.
pub const DEMO_PARAMS: (usize, f64, f64, f64, f64) = (3, 0.0, 25.0, 25.0, 200.0);
/// Largest image side accepted by the views.
pub const MAX_SIDE: usize = 512;

/// Side-by-side panels as RGBA, with a JSON summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub rgba: Vec<u8>,
    pub info: serde_json::Value,
}

impl Frame {
    fn from_panels(panels: &[ImageRgb], info: serde_json::Value) -> Self {
        let height = panels.iter().map(ImageRgb::height).max().unwrap_or(0);
        let width = panels.iter().map(ImageRgb::width).sum::<usize>() + GAP * panels.len().saturating_sub(1);
        let mut rgba = vec![255u8; width * height * 4];
        let mut x0 = 0;
        for p in panels {
            for y in 0..p.height() {
                for x in 0..p.width() {
                    let i = (y * width + x0 + x) * 4;
                    rgba[i..i + 3].copy_from_slice(&p.get(x, y));
                }
            }
            x0 += p.width() + GAP;
        }
        Self { width, height, rgba, info }
    }
}

const GAP: usize = 4;
const RED: [u8; 3] = [230, 40, 40];
const GREEN: [u8; 3] = [40, 220, 60];
const YELLOW: [u8; 3] = [250, 220, 30];
const BLUE: [u8; 3] = [70, 140, 255];

fn check_side(w: usize, h: usize) -> Result<(), String> {
    if w == 0 || h == 0 || w > MAX_SIDE || h > MAX_SIDE {
        return Err(format!("image sides must be in 1..={MAX_SIDE}, got {w}x{h}"));
    }
    Ok(())
}

fn outline(img: &mut ImageRgb, mask: &SegMask, color: [u8; 3]) {
    let (w, h) = mask.dims();
    for (x, y) in mask.pixels() {
        let edge = x == 0
            || y == 0
            || x + 1 == w
            || y + 1 == h
            || !mask.contains(x - 1, y)
            || !mask.contains(x + 1, y)
            || !mask.contains(x, y - 1)
            || !mask.contains(x, y + 1);
        if edge {
            img.put(x, y, color);
        }
    }
}

fn tint(img: &mut ImageRgb, mask: &SegMask, color: [u8; 3]) {
    for (x, y) in mask.pixels() {
        let p = img.get(x, y);
        img.put(x, y, [0, 1, 2].map(|c| ((u16::from(p[c]) + u16::from(color[c])) / 2) as u8));
    }
}

/// A bunch of berries where one berry, chosen by the seed, is speckled.
pub fn demo_scene(seed: u64, size: usize, speckle: f64) -> Result<(ImageRgb, MaskSet), String> {
    check_side(size, size)?;
    let cells = (size / (size / 4).max(16)).pow(2).max(1);
    Ok(bunch_scene(size, size, seed, Some(seed as usize % cells), speckle, "scene.png"))
}

/// Canvas image data as an RGB image; alpha is ignored.
pub fn image_from_rgba(width: usize, height: usize, rgba: &[u8]) -> Result<ImageRgb, String> {
    check_side(width, height)?;
    if rgba.len() != width * height * 4 {
        return Err(format!("expected {} bytes of RGBA, got {}", width * height * 4, rgba.len()));
    }
    let rgb = rgba.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    ImageRgb::new(width, height, rgb).map_err(|e| e.to_string())
}

/// Edge maps of the dual filter: the input, then narrow edges in white and
/// edges only the wide pass finds in red. With masks, the summary ranks
/// segments by edge ratio.
pub fn edge_frame(img: &ImageRgb, masks: Option<&MaskSet>, p: &DcedParams) -> Result<Frame, String> {
    let (w, h) = img.dims();
    check_side(w, h)?;
    let r = dced(&to_grayscale(img), p).map_err(|e| e.to_string())?;
    let mut edges = ImageRgb::filled(w, h, [0, 0, 0]).map_err(|e| e.to_string())?;
    for y in 0..h {
        for x in 0..w {
            if r.narrow.get(x, y) {
                edges.put(x, y, [255, 255, 255]);
            } else if r.diff.get(x, y) {
                edges.put(x, y, RED);
            }
        }
    }
    let mut segments = Vec::new();
    if let Some(set) = masks.filter(|s| !s.is_empty()) {
        let ranked = select_edgiest(set, img, p, set.len(), BoundaryGuard::Eroded).map_err(|e| e.to_string())?;
        for m in &ranked {
            segments.push(json!({ "mask_id": m.mask.mask_id(), "edge_ratio": m.stats.edge_ratio }));
        }
    }
    let info = json!({
        "wide_count": r.wide_count,
        "narrow_count": r.narrow_count,
        "diff_count": r.diff_count,
        "segments": segments,
    });
    Ok(Frame::from_panels(&[img.clone(), edges], info))
}

/// Ellipse parameters for the alignment view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub radii: (f64, f64),
    pub angle: f64,
}

fn axis_line(img: &mut ImageRgb, mask: &SegMask, color: [u8; 3]) {
    let Ok(pa) = principal_axis(mask) else { return };
    let reach = (mask.area() as f64).sqrt();
    let (w, h) = img.dims();
    let steps = (4.0 * reach) as i64;
    for i in -steps..=steps {
        let t = i as f64 / 4.0;
        let (x, y) = (pa.centroid.0 + t * pa.axis.0, pa.centroid.1 + t * pa.axis.1);
        let (xi, yi) = (x.round(), y.round());
        if xi >= 0.0 && yi >= 0.0 && (xi as usize) < w && (yi as usize) < h {
            img.put(xi as usize, yi as usize, color);
        }
    }
}

/// Source segment (red), destination segment (green) and the warped source
/// outline (yellow) with both principal axes, on one canvas.
pub fn alignment_frame(size: usize, src: Ellipse, dst: Ellipse, mode: GammaMode) -> Result<Frame, String> {
    check_side(size, size)?;
    let berry = |e: Ellipse, color| Berry::smooth(e.center, e.radii, e.angle, color);
    let (src_img, src_set) = render_scene(size, size, [20, 20, 20], &[berry(src, [200, 60, 60])], 0, "src");
    let (_, dst_set) = render_scene(size, size, [20, 20, 20], &[berry(dst, [60, 200, 60])], 0, "dst");
    let (Some(src_mask), Some(dst_mask)) = (src_set.masks().first(), dst_set.masks().first()) else {
        return Err("an ellipse lies outside the canvas".into());
    };
    let t = compute_alignment(src_mask, dst_mask, mode).map_err(|e| e.to_string())?;
    let (_, warped) = warp(&src_img, src_mask, &t, size, size).map_err(|e| e.to_string())?;
    let mut canvas = ImageRgb::filled(size, size, [20, 20, 20]).map_err(|e| e.to_string())?;
    tint(&mut canvas, src_mask, RED);
    tint(&mut canvas, dst_mask, GREEN);
    axis_line(&mut canvas, src_mask, RED);
    axis_line(&mut canvas, dst_mask, GREEN);
    if let Some(m) = &warped {
        outline(&mut canvas, m, YELLOW);
        axis_line(&mut canvas, m, BLUE);
    }
    let info = json!({
        "gamma": t.gamma,
        "linear_scale": t.linear_scale,
        "phi": t.phi,
        "signed_rotation": t.signed_rotation,
        "translation": [t.translation.0, t.translation.1],
        "warped_area": warped.as_ref().map(SegMask::area),
        "destination_area": dst_mask.area(),
    });
    Ok(Frame::from_panels(&[canvas], info))
}

/// Blend view settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendSettings {
    pub seed: u64,
    pub size: usize,
    pub speckle: f64,
    pub n_syn: usize,
    pub overlap_guard: bool,
    pub gamma_mode: GammaMode,
}

/// One synthetic sample: the anomalous scene with its chosen segments (red),
/// the normal scene with the destinations (green), and the result with the
/// blended regions (yellow).
pub fn blend_frame(s: &BlendSettings) -> Result<Frame, String> {
    let (bad_img, bad_set) = demo_scene(s.seed, s.size, s.speckle)?;
    let (good_img, good_set) = bunch_scene(s.size, s.size, s.seed.wrapping_add(1), None, 0.0, "normal.png");
    let (bad_masks, good_masks) = (filter_masks(&bad_set), filter_masks(&good_set));
    let cfg = GenerationConfig {
        n_syn: s.n_syn,
        overlap_guard: s.overlap_guard,
        gamma_mode: s.gamma_mode,
        seed: s.seed,
        ..GenerationConfig::default()
    };
    let (k, a, b, c, d) = DEMO_PARAMS;
    let params = DcedParams::new(k, a, b, c, d).map_err(|e| e.to_string())?;
    let pair = SamplePair {
        bad_img: &bad_img,
        bad_masks: &bad_masks,
        good_img: &good_img,
        good_masks: &good_masks,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let outcome = generate_sample(pair, &cfg, &params, &format!("{:016x}", s.seed), &mut rng)
        .map_err(|e| e.to_string())?;

    let mut src_panel = bad_img.clone();
    let mut dst_panel = good_img.clone();
    match outcome {
        SampleOutcome::Generated(images) => {
            let sample = images.into_iter().next().expect("generated samples are non-empty");
            let mut result = sample.image.clone();
            for r in &sample.records {
                if let Some(m) = bad_set.get(&r.source_mask_id) {
                    outline(&mut src_panel, m, RED);
                }
                if let Some(m) = good_set.get(&r.destination_mask_id) {
                    outline(&mut dst_panel, m, GREEN);
                }
            }
            for m in &sample.pasted {
                outline(&mut result, m, YELLOW);
            }
            let info = json!({ "records": sample.records });
            Ok(Frame::from_panels(&[src_panel, dst_panel, sample.image, result], info))
        }
        SampleOutcome::Rejected(rejection) => {
            let info = json!({ "rejection": rejection });
            Ok(Frame::from_panels(&[src_panel, dst_panel], info))
        }
    }
}

#[wasm_bindgen]
pub struct DemoFrame(Frame);

#[wasm_bindgen]
impl DemoFrame {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.0.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn rgba(&self) -> Vec<u8> {
        self.0.rgba.clone()
    }

    pub fn info(&self) -> String {
        serde_json::to_string_pretty(&self.0.info).expect("json values serialize")
    }
}

fn js(r: Result<Frame, String>) -> Result<DemoFrame, JsError> {
    r.map(DemoFrame).map_err(|e| JsError::new(&e))
}

fn params(k: usize, wmin: f64, wmax: f64, nmin: f64, nmax: f64) -> Result<DcedParams, String> {
    DcedParams::new(k, wmin, wmax, nmin, nmax).map_err(|e| e.to_string())
}

fn gamma(literal: bool) -> GammaMode {
    if literal {
        GammaMode::Literal
    } else {
        GammaMode::SqrtArea
    }
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen]
pub fn edges_generated(
    seed: u32,
    size: usize,
    speckle: f64,
    k: usize,
    wmin: f64,
    wmax: f64,
    nmin: f64,
    nmax: f64,
) -> Result<DemoFrame, JsError> {
    js((|| {
        let (img, set) = demo_scene(u64::from(seed), size, speckle)?;
        edge_frame(&img, Some(&set), &params(k, wmin, wmax, nmin, nmax)?)
    })())
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen]
pub fn edges_uploaded(
    width: usize,
    height: usize,
    rgba: &[u8],
    k: usize,
    wmin: f64,
    wmax: f64,
    nmin: f64,
    nmax: f64,
) -> Result<DemoFrame, JsError> {
    js((|| {
        let img = image_from_rgba(width, height, rgba)?;
        edge_frame(&img, None, &params(k, wmin, wmax, nmin, nmax)?)
    })())
}

#[wasm_bindgen]
pub fn paste_and_blend(
    seed: u32,
    size: usize,
    speckle: f64,
    n_syn: usize,
    overlap_guard: bool,
    literal_gamma: bool,
) -> Result<DemoFrame, JsError> {
    js(blend_frame(&BlendSettings {
        seed: u64::from(seed),
        size,
        speckle,
        n_syn,
        overlap_guard,
        gamma_mode: gamma(literal_gamma),
    }))
}

/// Ellipses are `(cx, cy, semi-major, semi-minor, angle in degrees)`.
#[allow(clippy::too_many_arguments)]
#[wasm_bindgen]
pub fn align(
    size: usize,
    src_cx: f64,
    src_cy: f64,
    src_a: f64,
    src_b: f64,
    src_deg: f64,
    dst_cx: f64,
    dst_cy: f64,
    dst_a: f64,
    dst_b: f64,
    dst_deg: f64,
    literal_gamma: bool,
) -> Result<DemoFrame, JsError> {
    let e = |cx: f64, cy: f64, a: f64, b: f64, deg: f64| Ellipse {
        center: (cx, cy),
        radii: (a, b),
        angle: deg.to_radians(),
    };
    js(alignment_frame(
        size,
        e(src_cx, src_cy, src_a, src_b, src_deg),
        e(dst_cx, dst_cy, dst_a, dst_b, dst_deg),
        gamma(literal_gamma),
    ))
}
