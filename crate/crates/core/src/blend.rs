//! Aligning a source segment onto a destination segment and merging it with
//! Poisson (seamless-cloning) blending.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::imgcore::{principal_axis, ImageGray, ImageRgb};
use crate::masks::{intersect, SegMask};

/// How the area ratio between the segments becomes a linear scale factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// Scale by `sqrt(gamma)` so the warped area matches the destination.
    #[default]
    SqrtArea,
    /// Scale linear dimensions by `gamma` itself.
    Literal,
}

/// Similarity transform taking a source segment onto a destination segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTransform {
    /// `area(dst) / area(src)`.
    pub gamma: f64,
    pub linear_scale: f64,
    /// Unsigned angle between the principal axes, in `[0, pi]`.
    pub phi: f64,
    /// Applied rotation: the smaller-magnitude representative that maps the
    /// source axis line onto the destination axis line.
    pub signed_rotation: f64,
    pub translation: (f64, f64),
    pub src_centroid: (f64, f64),
    pub dst_centroid: (f64, f64),
}

impl AlignmentTransform {
    /// Forward map of a source-image point into the destination canvas.
    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.signed_rotation.sin_cos();
        let (dx, dy) = (p.0 - self.src_centroid.0, p.1 - self.src_centroid.1);
        (
            self.dst_centroid.0 + self.linear_scale * (c * dx - s * dy),
            self.dst_centroid.1 + self.linear_scale * (s * dx + c * dy),
        )
    }

    /// Inverse map of a canvas point back into the source image.
    pub fn invert(&self, q: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.signed_rotation.sin_cos();
        let (dx, dy) = (q.0 - self.dst_centroid.0, q.1 - self.dst_centroid.1);
        (
            self.src_centroid.0 + (c * dx + s * dy) / self.linear_scale,
            self.src_centroid.1 + (-s * dx + c * dy) / self.linear_scale,
        )
    }
}

/// Scale from the area ratio, rotation from the principal axes, translation
/// between the centroids.
pub fn compute_alignment(
    src: &SegMask,
    dst: &SegMask,
    mode: GammaMode,
) -> Result<AlignmentTransform> {
    let ps = principal_axis(src)?;
    let pd = principal_axis(dst)?;
    let gamma = dst.area() as f64 / src.area() as f64;
    let linear_scale = match mode {
        GammaMode::SqrtArea => gamma.sqrt(),
        GammaMode::Literal => gamma,
    };
    let (phi, signed_rotation) = if ps.degenerate || pd.degenerate {
        (0.0, 0.0)
    } else {
        let (a, b) = (ps.axis, pd.axis);
        let dot = (a.0 * b.0 + a.1 * b.1).clamp(-1.0, 1.0);
        let cross = a.0 * b.1 - a.1 * b.0;
        let phi = dot.acos();
        let mut theta = cross.atan2(dot);
        if theta > std::f64::consts::FRAC_PI_2 {
            theta -= std::f64::consts::PI;
        } else if theta <= -std::f64::consts::FRAC_PI_2 {
            theta += std::f64::consts::PI;
        }
        (phi, theta)
    };
    Ok(AlignmentTransform {
        gamma,
        linear_scale,
        phi,
        signed_rotation,
        translation: (pd.centroid.0 - ps.centroid.0, pd.centroid.1 - ps.centroid.1),
        src_centroid: ps.centroid,
        dst_centroid: pd.centroid,
    })
}

/// Inverse coordinates this close to an integer snap onto it, so pure
/// translations copy pixels exactly.
const SNAP: f64 = 1e-9;

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r
    } else {
        v
    }
}

/// Resamples the source image and mask into a `canvas_w x canvas_h` canvas.
///
/// The image is sampled bilinearly, the mask by nearest neighbour. Canvas
/// pixels whose preimage falls outside the source are background (black,
/// not in the mask). The mask is `None` when it lands entirely off-canvas.
pub fn warp(
    src_img: &ImageRgb,
    src_mask: &SegMask,
    t: &AlignmentTransform,
    canvas_w: usize,
    canvas_h: usize,
) -> Result<(ImageRgb, Option<SegMask>)> {
    if src_img.dims() != src_mask.dims() {
        return Err(Error::DimensionMismatch {
            left: src_img.dims(),
            right: src_mask.dims(),
        });
    }
    if !(t.linear_scale > 0.0) || !t.linear_scale.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "linear scale must be positive, got {}",
            t.linear_scale
        )));
    }
    let mut out = ImageRgb::filled(canvas_w, canvas_h, [0, 0, 0])?;
    let mut bits = vec![false; canvas_w * canvas_h];

    // Only canvas pixels near the forward image of the mask's box can be hit.
    let bb = src_mask.bbox();
    let corners = [
        (bb.x0 as f64 - 1.0, bb.y0 as f64 - 1.0),
        (bb.x1 as f64, bb.y0 as f64 - 1.0),
        (bb.x0 as f64 - 1.0, bb.y1 as f64),
        (bb.x1 as f64, bb.y1 as f64),
    ]
    .map(|c| t.apply(c));
    let lo_x = corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min).floor() - 1.0;
    let hi_x = corners.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max).ceil() + 1.0;
    let lo_y = corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min).floor() - 1.0;
    let hi_y = corners.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max).ceil() + 1.0;
    let clip = |v: f64, n: usize| v.clamp(0.0, n as f64) as usize;
    let (x_from, x_to) = (clip(lo_x, canvas_w), clip(hi_x + 1.0, canvas_w));
    let (y_from, y_to) = (clip(lo_y, canvas_h), clip(hi_y + 1.0, canvas_h));

    let (sw, sh) = src_img.dims();
    for y in y_from..y_to {
        for x in x_from..x_to {
            let (u, v) = t.invert((x as f64, y as f64));
            let (u, v) = (snap(u), snap(v));
            let (nu, nv) = ((u + 0.5).floor(), (v + 0.5).floor());
            if nu >= 0.0 && nv >= 0.0 && src_mask.contains(nu as usize, nv as usize) {
                bits[y * canvas_w + x] = true;
            }
            if let Some(rgb) = bilinear(src_img, u, v, sw, sh) {
                out.put(x, y, rgb);
            }
        }
    }
    let mask = SegMask::from_bitmap(
        canvas_w,
        canvas_h,
        &bits,
        src_mask.mask_id(),
        src_mask.source_image(),
    )?;
    Ok((out, mask))
}

fn bilinear(img: &ImageRgb, u: f64, v: f64, w: usize, h: usize) -> Option<[u8; 3]> {
    if u < 0.0 || v < 0.0 || u > (w - 1) as f64 || v > (h - 1) as f64 {
        return None;
    }
    let (x0, y0) = (u.floor() as usize, v.floor() as usize);
    let (fx, fy) = (u - x0 as f64, v - y0 as f64);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (p00, p10, p01, p11) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
    let mut rgb = [0u8; 3];
    for c in 0..3 {
        let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
        let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
        rgb[c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
    }
    Some(rgb)
}

/// Blend domain: warped source mask clipped to the destination mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PasteRegion {
    pub region: SegMask,
    /// `area(region) / area(destination mask)`.
    pub overlap_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum PasteRejection {
    Disjoint,
    InsufficientOverlap { overlap_ratio: f64, min_overlap: f64 },
}

/// Intersects the masks and rejects overlaps below `min_overlap` (when set).
pub fn paste_region(
    warped_mask: &SegMask,
    dst_mask: &SegMask,
    min_overlap: Option<f64>,
) -> Result<std::result::Result<PasteRegion, PasteRejection>> {
    let Some(region) = intersect(dst_mask, warped_mask)? else {
        return Ok(Err(PasteRejection::Disjoint));
    };
    let overlap_ratio = region.area() as f64 / dst_mask.area() as f64;
    if let Some(min) = min_overlap {
        if overlap_ratio < min {
            return Ok(Err(PasteRejection::InsufficientOverlap {
                overlap_ratio,
                min_overlap: min,
            }));
        }
    }
    Ok(Ok(PasteRegion {
        region,
        overlap_ratio,
    }))
}

/// Successive over-relaxation factor.
pub const SOR_OMEGA: f64 = 1.9;
/// Bound on the relative residual of every returned solution.
pub const RESIDUAL_TOLERANCE: f64 = 1e-6;
/// Residual the iteration aims for. A residual of `RESIDUAL_TOLERANCE`
/// alone can leave per-pixel errors near 1e-3 on small regions; the
/// tighter target keeps them below 1e-4.
pub const RESIDUAL_TARGET: f64 = 1e-9;
pub const MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BlendError {
    #[error("blend region touches the image border")]
    RegionTouchesBorder,
    #[error("source {src:?} and destination {dst:?} sizes differ")]
    SizeMismatch {
        src: (usize, usize),
        dst: (usize, usize),
    },
    #[error("poisson solve did not converge: relative residual {residual:e} after {sweeps} sweeps")]
    NotConverged { residual: f64, sweeps: usize },
}

/// One channel of the discrete Poisson system over a region.
///
/// Unknowns are the region pixels in row-major order. For each unknown `p`:
/// `4 f_p - sum_{q in N(p), q in region} f_q = b_p` with
/// `b_p = sum_{q in N(p)} (g_p - g_q) + sum_{q in N(p), q not in region} dst_q`.
#[derive(Debug, Clone)]
pub struct PoissonSystem {
    /// Row-major pixel index of every unknown.
    pub pixels: Vec<usize>,
    /// Indices (into `pixels`) of each unknown's in-region 4-neighbours.
    pub neighbours: Vec<Vec<usize>>,
    pub rhs: Vec<f64>,
}

impl PoissonSystem {
    /// `guidance` and `boundary` are full rasters of width `width`.
    pub fn build(region: &SegMask, guidance: &[f64], boundary: &[f64]) -> Self {
        let w = region.width();
        let pixels: Vec<usize> = region.pixels().map(|(x, y)| y * w + x).collect();
        let index_of = |i: usize| pixels.binary_search(&i).ok();
        let mut neighbours = Vec::with_capacity(pixels.len());
        let mut rhs = Vec::with_capacity(pixels.len());
        for &p in &pixels {
            let mut nb = Vec::with_capacity(4);
            let mut b = 0.0;
            for q in [p - 1, p + 1, p - w, p + w] {
                b += guidance[p] - guidance[q];
                match index_of(q) {
                    Some(j) => nb.push(j),
                    None => b += boundary[q],
                }
            }
            neighbours.push(nb);
            rhs.push(b);
        }
        Self {
            pixels,
            neighbours,
            rhs,
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// `||b - A f|| / ||b||` (absolute norm when `b = 0`).
    pub fn relative_residual(&self, f: &[f64]) -> f64 {
        let (mut r2, mut b2) = (0.0, 0.0);
        for (i, nb) in self.neighbours.iter().enumerate() {
            let af = 4.0 * f[i] - nb.iter().map(|&j| f[j]).sum::<f64>();
            r2 += (self.rhs[i] - af).powi(2);
            b2 += self.rhs[i] * self.rhs[i];
        }
        if b2 > 0.0 {
            (r2 / b2).sqrt()
        } else {
            r2.sqrt()
        }
    }

    /// Gauss-Seidel with over-relaxation in row-major order, starting from
    /// `f`, until the relative residual reaches [`RESIDUAL_TARGET`]. After
    /// [`MAX_SWEEPS`] the result is accepted if it is within
    /// [`RESIDUAL_TOLERANCE`]. Returns the final relative residual and the
    /// sweeps performed.
    pub fn solve_sor(&self, f: &mut [f64]) -> std::result::Result<(f64, usize), BlendError> {
        const CHECK_EVERY: usize = 4;
        let mut residual = self.relative_residual(f);
        let mut sweeps = 0;
        while residual > RESIDUAL_TARGET {
            if sweeps >= MAX_SWEEPS {
                if residual <= RESIDUAL_TOLERANCE {
                    break;
                }
                return Err(BlendError::NotConverged { residual, sweeps });
            }
            for (i, nb) in self.neighbours.iter().enumerate() {
                let sum: f64 = nb.iter().map(|&j| f[j]).sum();
                let gs = (self.rhs[i] + sum) / 4.0;
                f[i] += SOR_OMEGA * (gs - f[i]);
            }
            sweeps += 1;
            if sweeps % CHECK_EVERY == 0 || sweeps >= MAX_SWEEPS {
                residual = self.relative_residual(f);
            }
        }
        Ok((residual, sweeps))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlendOutcome {
    pub image: ImageRgb,
    /// Final relative residual per channel.
    pub residuals: [f64; 3],
    pub sweeps: [usize; 3],
}

/// Solved channel values before rounding, one plane per channel, indexed
/// like [`PoissonSystem::pixels`].
pub fn poisson_solve(
    dst_img: &ImageRgb,
    src_img: &ImageRgb,
    region: &SegMask,
) -> std::result::Result<(Vec<[f64; 3]>, [f64; 3], [usize; 3], Vec<usize>), BlendError> {
    if src_img.dims() != dst_img.dims() || region.dims() != dst_img.dims() {
        return Err(BlendError::SizeMismatch {
            src: src_img.dims(),
            dst: dst_img.dims(),
        });
    }
    if region.touches_border() {
        return Err(BlendError::RegionTouchesBorder);
    }
    let n = dst_img.width() * dst_img.height();
    let mut values: Vec<[f64; 3]> = Vec::new();
    let mut residuals = [0.0; 3];
    let mut sweeps = [0; 3];
    let mut pixels = Vec::new();
    for c in 0..3 {
        let channel = |img: &ImageRgb| -> Vec<f64> {
            (0..n).map(|i| f64::from(img.as_raw()[i * 3 + c])).collect()
        };
        let (guidance, boundary) = (channel(src_img), channel(dst_img));
        let system = PoissonSystem::build(region, &guidance, &boundary);
        // Starting from the destination makes src == dst an exact fixed point
        // and keeps the iteration independent of the guidance's offset.
        let mut f: Vec<f64> = system.pixels.iter().map(|&p| boundary[p]).collect();
        let (res, sw) = system.solve_sor(&mut f)?;
        debug_assert!(res <= RESIDUAL_TOLERANCE);
        residuals[c] = res;
        sweeps[c] = sw;
        if values.is_empty() {
            values = vec![[0.0; 3]; system.len()];
        }
        for (v, x) in values.iter_mut().zip(f) {
            v[c] = x;
        }
        pixels = system.pixels;
    }
    Ok((values, residuals, sweeps, pixels))
}

/// Seamless cloning of `src_img` into `dst_img` over `region`.
///
/// Values are rounded and clamped to `[0, 255]` only when written out;
/// pixels outside the region are copied from `dst_img` unchanged.
pub fn poisson_blend(
    dst_img: &ImageRgb,
    src_img: &ImageRgb,
    region: &SegMask,
) -> std::result::Result<BlendOutcome, BlendError> {
    let (values, residuals, sweeps, pixels) = poisson_solve(dst_img, src_img, region)?;
    let mut out = dst_img.clone();
    let w = dst_img.width();
    for (p, v) in pixels.iter().zip(values) {
        out.put(p % w, p / w, v.map(|x| x.round().clamp(0.0, 255.0) as u8));
    }
    Ok(BlendOutcome {
        image: out,
        residuals,
        sweeps,
    })
}

/// Magnitude of the guidance Laplacian averaged over channels, for debug
/// dumps. Zero outside the region.
pub fn guidance_plane(src_img: &ImageRgb, region: &SegMask) -> Result<ImageGray> {
    let (w, h) = src_img.dims();
    if region.dims() != (w, h) {
        return Err(Error::DimensionMismatch {
            left: (w, h),
            right: region.dims(),
        });
    }
    let mut plane = vec![0.0; w * h];
    for (x, y) in region.pixels() {
        if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
            continue;
        }
        let mut acc = 0.0;
        for c in 0..3 {
            let g = |x: usize, y: usize| f64::from(src_img.get(x, y)[c]);
            acc += (4.0 * g(x, y) - g(x - 1, y) - g(x + 1, y) - g(x, y - 1) - g(x, y + 1)).abs();
        }
        plane[y * w + x] = (acc / 3.0).min(255.0);
    }
    ImageGray::new(w, h, plane)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use super::*;

    fn rect(w: usize, h: usize, x: std::ops::Range<usize>, y: std::ops::Range<usize>) -> SegMask {
        SegMask::from_fn(w, h, "r", "s", move |px, py| x.contains(&px) && y.contains(&py)).unwrap()
    }

    #[test]
    fn identity_alignment() {
        let m = rect(40, 40, 5..30, 10..18);
        let t = compute_alignment(&m, &m, GammaMode::SqrtArea).unwrap();
        assert_eq!(t.gamma, 1.0);
        assert_eq!(t.phi, 0.0);
        assert_eq!(t.translation, (0.0, 0.0));
    }

    #[test]
    fn area_ratio_and_orthogonal_axes() {
        let src = rect(100, 100, 10..30, 10..15);
        let dst = rect(100, 100, 40..80, 50..60);
        let t = compute_alignment(&src, &dst, GammaMode::SqrtArea).unwrap();
        assert_eq!(t.gamma, 4.0);
        assert_eq!(t.linear_scale, 2.0);
        let lit = compute_alignment(&src, &dst, GammaMode::Literal).unwrap();
        assert_eq!(lit.linear_scale, 4.0);

        let tall = rect(100, 100, 50..55, 10..30);
        let t = compute_alignment(&src, &tall, GammaMode::SqrtArea).unwrap();
        assert!((t.phi - FRAC_PI_2).abs() < 1e-12);
        assert!((t.signed_rotation.abs() - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn degenerate_axis_means_no_rotation() {
        let disc = SegMask::from_fn(50, 50, "d", "s", |x, y| {
            let (dx, dy) = (x as f64 - 25.0, y as f64 - 25.0);
            dx * dx + dy * dy <= 100.0
        })
        .unwrap();
        let bar = rect(50, 50, 5..40, 5..9);
        let t = compute_alignment(&bar, &disc, GammaMode::SqrtArea).unwrap();
        assert_eq!((t.phi, t.signed_rotation), (0.0, 0.0));
    }

    #[test]
    fn apply_and_invert_are_inverse() {
        let t = AlignmentTransform {
            gamma: 2.25,
            linear_scale: 1.5,
            phi: 0.4,
            signed_rotation: -0.4,
            translation: (3.0, -2.0),
            src_centroid: (10.0, 12.0),
            dst_centroid: (13.0, 10.0),
        };
        let p = (7.25, 19.5);
        let q = t.invert(t.apply(p));
        assert!((q.0 - p.0).abs() < 1e-12 && (q.1 - p.1).abs() < 1e-12);
        assert!(t.signed_rotation.abs() < PI);
    }

    #[test]
    fn warp_identity_and_translation() {
        let img = ImageRgb::new(
            8,
            8,
            (0..8 * 8 * 3).map(|i| ((i * 37) % 251) as u8).collect(),
        )
        .unwrap();
        let m = rect(8, 8, 2..5, 2..6);
        let t = compute_alignment(&m, &m, GammaMode::SqrtArea).unwrap();
        let (out, wm) = warp(&img, &m, &t, 8, 8).unwrap();
        assert_eq!(wm.unwrap().runs(), m.runs());
        for (x, y) in m.pixels() {
            assert_eq!(out.get(x, y), img.get(x, y));
        }

        let dst = rect(12, 10, 6..9, 3..7);
        let shifted = SegMask::new(12, 10, dst.runs().to_vec(), "r", "s").unwrap();
        let t = compute_alignment(&m, &shifted, GammaMode::SqrtArea).unwrap();
        assert_eq!(t.translation, (4.0, 1.0));
        let (out, wm) = warp(&img, &m, &t, 12, 10).unwrap();
        assert_eq!(wm.unwrap().runs(), shifted.runs());
        for (x, y) in m.pixels() {
            assert_eq!(out.get(x + 4, y + 1), img.get(x, y));
        }
    }

    #[test]
    fn warp_off_canvas_is_empty() {
        let img = ImageRgb::filled(20, 20, [9, 9, 9]).unwrap();
        let m = rect(20, 20, 2..6, 2..5);
        let mut t = compute_alignment(&m, &m, GammaMode::SqrtArea).unwrap();
        t.dst_centroid = (500.0, 500.0);
        let (_, wm) = warp(&img, &m, &t, 20, 20).unwrap();
        assert!(wm.is_none());
    }

    #[test]
    fn paste_region_cases() {
        let a = rect(30, 30, 5..15, 5..15);
        let r = paste_region(&a, &a, Some(0.5)).unwrap().unwrap();
        assert_eq!(r.overlap_ratio, 1.0);
        let far = rect(30, 30, 20..25, 20..25);
        assert_eq!(paste_region(&far, &a, None).unwrap(), Err(PasteRejection::Disjoint));
        let half = rect(30, 30, 10..20, 5..15);
        let r = paste_region(&half, &a, Some(0.5)).unwrap().unwrap();
        assert_eq!(r.overlap_ratio, 0.5);
        assert!(matches!(
            paste_region(&half, &a, Some(0.6)).unwrap(),
            Err(PasteRejection::InsufficientOverlap { .. })
        ));
    }

    #[test]
    fn blend_border_and_size_errors() {
        let img = ImageRgb::filled(10, 10, [1, 2, 3]).unwrap();
        let edge = rect(10, 10, 0..3, 3..6);
        assert_eq!(poisson_blend(&img, &img, &edge), Err(BlendError::RegionTouchesBorder));
        let other = ImageRgb::filled(9, 10, [1, 2, 3]).unwrap();
        let inner = rect(10, 10, 3..6, 3..6);
        assert!(matches!(
            poisson_blend(&img, &other, &inner),
            Err(BlendError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn constant_guidance_fills_with_boundary_value() {
        let dst = ImageRgb::filled(12, 12, [80, 120, 200]).unwrap();
        let src = ImageRgb::filled(12, 12, [5, 5, 5]).unwrap();
        let region = rect(12, 12, 3..9, 2..10);
        let out = poisson_blend(&dst, &src, &region).unwrap();
        assert_eq!(out.image, dst);
    }
}
