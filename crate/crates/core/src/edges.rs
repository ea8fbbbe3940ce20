//! Canny edge detection and the dual-threshold texture filter built on it.
//!
//! The dual filter runs Canny twice over one shared gradient computation:
//! once with a permissive ("wide") threshold pair and once with a stricter
//! ("narrow") one. Because the narrow thresholds dominate the wide ones the
//! narrow map is always a subset of the wide map, and their difference keeps
//! the weak, texture-like edges while dropping the strong contours that
//! every segment has.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{gaussian_blur, sigma_for_kernel, sobel_gradients, ImageGray};
use crate::masks::{erode, SegMask};

/// Sobel magnitudes are multiplied by this before thresholding, dividing out
/// the stencil gain so thresholds in `[0, 250]` span the useful range for
/// 8-bit input.
pub const MAGNITUDE_SCALE: f64 = 0.25;

/// Slack for magnitude ties in non-maximum suppression.
const NMS_TOLERANCE: f64 = 1e-9;

/// A binary edge plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    edges: Vec<bool>,
}

impl EdgeMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            edges: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, edges: Vec<bool>) -> Result<Self> {
        if edges.len() != width * height {
            return Err(Error::BufferLength {
                expected: width * height,
                actual: edges.len(),
            });
        }
        Ok(Self {
            width,
            height,
            edges,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.edges
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.edges[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }

    pub fn is_subset_of(&self, other: &EdgeMap) -> bool {
        self.dims() == other.dims() && self.edges.iter().zip(&other.edges).all(|(&a, &b)| !a || b)
    }

    /// Pixels set here and clear in `other`.
    pub fn and_not(&self, other: &EdgeMap) -> EdgeMap {
        debug_assert_eq!(self.dims(), other.dims());
        EdgeMap {
            width: self.width,
            height: self.height,
            edges: self.edges.iter().zip(&other.edges).map(|(&a, &b)| a && !b).collect(),
        }
    }
}

/// A hysteresis threshold pair in scaled gradient-magnitude units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CannyThresholds {
    pub th_min: f64,
    pub th_max: f64,
}

impl CannyThresholds {
    pub fn new(th_min: f64, th_max: f64) -> Result<Self> {
        if !(th_min.is_finite() && th_max.is_finite()) || th_min < 0.0 || th_min >= th_max {
            return Err(Error::InvalidThresholds(format!(
                "need 0 <= th_min < th_max, got ({th_min}, {th_max})"
            )));
        }
        Ok(Self { th_min, th_max })
    }
}

/// Blur size plus the wide and narrow threshold pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlatParams", into = "FlatParams")]
pub struct DcedParams {
    pub kernel_size: usize,
    pub wide: CannyThresholds,
    pub narrow: CannyThresholds,
}

#[derive(Serialize, Deserialize)]
struct FlatParams {
    kernel_size: usize,
    wth_min: f64,
    wth_max: f64,
    nth_min: f64,
    nth_max: f64,
}

impl From<DcedParams> for FlatParams {
    fn from(p: DcedParams) -> Self {
        Self {
            kernel_size: p.kernel_size,
            wth_min: p.wide.th_min,
            wth_max: p.wide.th_max,
            nth_min: p.narrow.th_min,
            nth_max: p.narrow.th_max,
        }
    }
}

impl TryFrom<FlatParams> for DcedParams {
    type Error = Error;

    fn try_from(f: FlatParams) -> Result<Self> {
        DcedParams::new(f.kernel_size, f.wth_min, f.wth_max, f.nth_min, f.nth_max)
    }
}

impl DcedParams {
    /// Enforces `wth_max > wth_min`, `nth_min >= wth_min`, `nth_max > nth_min`
    /// and `nth_max > wth_max`.
    pub fn new(
        kernel_size: usize,
        wth_min: f64,
        wth_max: f64,
        nth_min: f64,
        nth_max: f64,
    ) -> Result<Self> {
        if kernel_size == 0 || kernel_size % 2 == 0 {
            return Err(Error::InvalidKernelSize(kernel_size));
        }
        let wide = CannyThresholds::new(wth_min, wth_max)?;
        let narrow = CannyThresholds::new(nth_min, nth_max)?;
        if nth_min < wth_min || nth_max <= wth_max {
            return Err(Error::InvalidThresholds(format!(
                "narrow ({nth_min}, {nth_max}) must dominate wide ({wth_min}, {wth_max})"
            )));
        }
        Ok(Self {
            kernel_size,
            wide,
            narrow,
        })
    }

    /// `(K, wth_min, wth_max, nth_min, nth_max)`, the lexicographic sort key.
    pub fn key(&self) -> (usize, f64, f64, f64, f64) {
        (
            self.kernel_size,
            self.wide.th_min,
            self.wide.th_max,
            self.narrow.th_min,
            self.narrow.th_max,
        )
    }

    pub fn sigma(&self) -> f64 {
        sigma_for_kernel(self.kernel_size)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DcedResult {
    pub wide: EdgeMap,
    pub narrow: EdgeMap,
    pub diff: EdgeMap,
    pub wide_count: usize,
    pub narrow_count: usize,
    pub diff_count: usize,
}

/// Gradient magnitude after non-maximum suppression; zero where suppressed.
///
/// Computing this once per `(image, K)` lets any number of threshold pairs
/// be applied with [`SuppressedGradient::hysteresis`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuppressedGradient {
    width: usize,
    height: usize,
    magnitude: Vec<f64>,
}

impl SuppressedGradient {
    pub fn compute(img: &ImageGray, kernel_size: usize) -> Result<Self> {
        if kernel_size == 0 || kernel_size % 2 == 0 {
            return Err(Error::InvalidKernelSize(kernel_size));
        }
        let (w, h) = img.dims();
        if w < 3 || h < 3 {
            return Err(Error::ImageTooSmall {
                width: w,
                height: h,
            });
        }
        let blurred = gaussian_blur(img, kernel_size, sigma_for_kernel(kernel_size))?;
        let grad = sobel_gradients(&blurred)?;
        let mag: Vec<f64> = grad.magnitude.iter().map(|m| m * MAGNITUDE_SCALE).collect();
        let at = |x: isize, y: isize| {
            if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                0.0
            } else {
                mag[y as usize * w + x as usize]
            }
        };
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let m = mag[i];
                if m <= 0.0 {
                    continue;
                }
                let (dx, dy) = direction_step(grad.gx[i], grad.gy[i]);
                let (xi, yi) = (x as isize, y as isize);
                let prev = at(xi - dx, yi - dy);
                let next = at(xi + dx, yi + dy);
                let tol = NMS_TOLERANCE * (1.0 + m);
                if m - prev > tol && m >= next - tol {
                    out[i] = m;
                }
            }
        }
        Ok(Self {
            width: w,
            height: h,
            magnitude: out,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn magnitude(&self) -> &[f64] {
        &self.magnitude
    }

    pub fn max_magnitude(&self) -> f64 {
        self.magnitude.iter().copied().fold(0.0, f64::max)
    }

    /// Double threshold plus 8-connected hysteresis: a pixel is an edge when
    /// its magnitude exceeds `th_min` and it connects through such pixels to
    /// one exceeding `th_max`.
    pub fn hysteresis(&self, t: CannyThresholds) -> EdgeMap {
        let (w, h) = (self.width, self.height);
        let mut edges = vec![false; w * h];
        let mut stack = Vec::new();
        for (i, &m) in self.magnitude.iter().enumerate() {
            if m > t.th_max && !edges[i] {
                edges[i] = true;
                stack.push(i);
                while let Some(j) = stack.pop() {
                    let (x, y) = ((j % w) as isize, (j / w) as isize);
                    for ny in y - 1..=y + 1 {
                        for nx in x - 1..=x + 1 {
                            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                                continue;
                            }
                            let k = ny as usize * w + nx as usize;
                            if !edges[k] && self.magnitude[k] > t.th_min {
                                edges[k] = true;
                                stack.push(k);
                            }
                        }
                    }
                }
            }
        }
        EdgeMap {
            width: w,
            height: h,
            edges,
        }
    }

    /// Both passes of the dual filter over this gradient.
    pub fn dual(&self, p: &DcedParams) -> DcedResult {
        let wide = self.hysteresis(p.wide);
        let narrow = self.hysteresis(p.narrow);
        let diff = wide.and_not(&narrow);
        DcedResult {
            wide_count: wide.count(),
            narrow_count: narrow.count(),
            diff_count: diff.count(),
            wide,
            narrow,
            diff,
        }
    }
}

/// Quantizes the gradient direction to one of four neighbour offsets
/// (0, 45, 90 or 135 degrees, `y` downwards).
pub(crate) fn direction_step(gx: f64, gy: f64) -> (isize, isize) {
    let mut deg = gy.atan2(gx).to_degrees();
    if deg < 0.0 {
        deg += 180.0;
    }
    if deg >= 180.0 {
        deg -= 180.0;
    }
    if !(22.5..157.5).contains(&deg) {
        (1, 0)
    } else if deg < 67.5 {
        (1, 1)
    } else if deg < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}

/// Canny: Gaussian blur, Sobel, non-maximum suppression, hysteresis.
pub fn canny(img: &ImageGray, t: CannyThresholds, kernel_size: usize) -> Result<EdgeMap> {
    Ok(SuppressedGradient::compute(img, kernel_size)?.hysteresis(t))
}

/// Wide and narrow Canny passes and their difference.
pub fn dced(img: &ImageGray, p: &DcedParams) -> Result<DcedResult> {
    Ok(SuppressedGradient::compute(img, p.kernel_size)?.dual(p))
}

/// Which pixels of a segment count towards its edge statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryGuard {
    /// Only pixels of the mask eroded past the blur and gradient halo.
    #[default]
    Eroded,
    /// Every pixel of the masked crop, contour edges included.
    None,
}

impl BoundaryGuard {
    pub fn radius(self, kernel_size: usize) -> usize {
        match self {
            BoundaryGuard::Eroded => (kernel_size - 1) / 2 + 1,
            BoundaryGuard::None => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskedEdgeStats {
    pub wide_count: usize,
    pub narrow_count: usize,
    pub diff_count: usize,
    /// Foreground area of the mask before any erosion.
    pub mask_count: usize,
    /// `diff_count / mask_count`.
    pub edge_ratio: f64,
    /// The guard eroded the mask away entirely; the ratio is reported as 0.
    pub eroded_empty: bool,
}

/// Dual-filter edge statistics of one segment.
///
/// The image is masked (background set to zero) and cropped to the mask's
/// bounding box padded by the blur and gradient halo, then both Canny passes
/// run on the crop.
pub fn masked_edge_stats(
    img: &ImageGray,
    mask: &SegMask,
    p: &DcedParams,
    guard: BoundaryGuard,
) -> Result<MaskedEdgeStats> {
    if img.dims() != mask.dims() {
        return Err(Error::DimensionMismatch {
            left: img.dims(),
            right: mask.dims(),
        });
    }
    let (w, h) = img.dims();
    let pad = (p.kernel_size - 1) / 2 + 1;
    let bb = mask.bbox();
    let (mut x0, mut y0) = (bb.x0.saturating_sub(pad), bb.y0.saturating_sub(pad));
    let (mut x1, mut y1) = ((bb.x1 + pad).min(w), (bb.y1 + pad).min(h));
    // Grow tiny crops so the gradient stencil fits.
    while x1 - x0 < 3 && (x0 > 0 || x1 < w) {
        if x1 < w {
            x1 += 1;
        } else {
            x0 -= 1;
        }
    }
    while y1 - y0 < 3 && (y0 > 0 || y1 < h) {
        if y1 < h {
            y1 += 1;
        } else {
            y0 -= 1;
        }
    }
    let (cw, ch) = (x1 - x0, y1 - y0);
    let crop = ImageGray::from_fn(cw, ch, |x, y| {
        if mask.contains(x0 + x, y0 + y) {
            img.get(x0 + x, y0 + y)
        } else {
            0.0
        }
    })?;
    let result = dced(&crop, p)?;

    let mask_count = mask.area();
    let counted = match guard {
        BoundaryGuard::None => None,
        BoundaryGuard::Eroded => match erode(mask, guard.radius(p.kernel_size)) {
            Some(m) => Some(m),
            None => {
                return Ok(MaskedEdgeStats {
                    wide_count: 0,
                    narrow_count: 0,
                    diff_count: 0,
                    mask_count,
                    edge_ratio: 0.0,
                    eroded_empty: true,
                })
            }
        },
    };
    let (mut wide_count, mut narrow_count, mut diff_count) = (0, 0, 0);
    for y in 0..ch {
        for x in 0..cw {
            if let Some(m) = &counted {
                if !m.contains(x0 + x, y0 + y) {
                    continue;
                }
            }
            let i = y * cw + x;
            wide_count += usize::from(result.wide.edges[i]);
            narrow_count += usize::from(result.narrow.edges[i]);
            diff_count += usize::from(result.diff.edges[i]);
        }
    }
    Ok(MaskedEdgeStats {
        wide_count,
        narrow_count,
        diff_count,
        mask_count,
        edge_ratio: edge_ratio(wide_count, narrow_count, mask_count),
        eroded_empty: false,
    })
}

/// `(n_wide - n_narrow) / n_mask`.
pub fn edge_ratio(n_wide: usize, n_narrow: usize, n_mask: usize) -> f64 {
    (n_wide as f64 - n_narrow as f64) / n_mask as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(lo: f64, hi: f64) -> CannyThresholds {
        CannyThresholds::new(lo, hi).unwrap()
    }

    #[test]
    fn thresholds_validate() {
        assert!(CannyThresholds::new(10.0, 10.0).is_err());
        assert!(CannyThresholds::new(-1.0, 10.0).is_err());
        assert!(DcedParams::new(4, 0.0, 25.0, 0.0, 50.0).is_err());
        assert!(DcedParams::new(3, 25.0, 50.0, 0.0, 75.0).is_err());
        assert!(DcedParams::new(3, 0.0, 50.0, 25.0, 50.0).is_err());
        assert!(DcedParams::new(3, 0.0, 25.0, 0.0, 50.0).is_ok());
    }

    #[test]
    fn params_json_is_flat() {
        let p = DcedParams::new(5, 0.0, 25.0, 25.0, 50.0).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(
            s,
            r#"{"kernel_size":5,"wth_min":0.0,"wth_max":25.0,"nth_min":25.0,"nth_max":50.0}"#
        );
        assert_eq!(serde_json::from_str::<DcedParams>(&s).unwrap(), p);
        assert!(serde_json::from_str::<DcedParams>(
            r#"{"kernel_size":5,"wth_min":0,"wth_max":25,"nth_min":0,"nth_max":25}"#
        )
        .is_err());
    }

    #[test]
    fn direction_bins() {
        assert_eq!(direction_step(1.0, 0.0), (1, 0));
        assert_eq!(direction_step(-1.0, 0.0), (1, 0));
        assert_eq!(direction_step(1.0, 1.0), (1, 1));
        assert_eq!(direction_step(0.0, -1.0), (0, 1));
        assert_eq!(direction_step(-1.0, 1.0), (-1, 1));
        assert_eq!(direction_step(1.0, -1.0), (-1, 1));
    }

    #[test]
    fn constant_image_has_no_edges() {
        let img = ImageGray::filled(9, 9, 128.0).unwrap();
        assert_eq!(canny(&img, t(0.0, 1.0), 3).unwrap().count(), 0);
        let p = DcedParams::new(3, 0.0, 25.0, 25.0, 50.0).unwrap();
        let r = dced(&img, &p).unwrap();
        assert_eq!((r.wide_count, r.narrow_count, r.diff_count), (0, 0, 0));
    }

    #[test]
    fn step_gives_single_column() {
        let img = ImageGray::from_fn(16, 16, |x, _| if x < 8 { 0.0 } else { 255.0 }).unwrap();
        let e = canny(&img, t(10.0, 50.0), 3).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(e.get(x, y), x == 7, "pixel ({x}, {y})");
            }
        }
        let above = SuppressedGradient::compute(&img, 3).unwrap().max_magnitude();
        assert_eq!(canny(&img, t(above, above + 1.0), 3).unwrap().count(), 0);
    }

    #[test]
    fn narrow_above_max_gives_diff_equal_wide() {
        let img = ImageGray::from_fn(12, 12, |x, y| ((x * 31 + y * 17) % 7) as f64 * 30.0).unwrap();
        let max = SuppressedGradient::compute(&img, 3).unwrap().max_magnitude();
        let p = DcedParams::new(3, 0.0, 5.0, max, max + 1.0).unwrap();
        let r = dced(&img, &p).unwrap();
        assert_eq!(r.narrow_count, 0);
        assert_eq!(r.diff, r.wide);
        assert!(r.wide_count > 0);
    }

    fn disc_scene(textured: bool) -> (ImageGray, SegMask) {
        let (cx, cy, rad) = (24.0, 24.0, 16.0);
        let inside = |x: usize, y: usize| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            dx * dx + dy * dy <= rad * rad
        };
        let img = ImageGray::from_fn(48, 48, |x, y| {
            if inside(x, y) {
                if textured && ((x * 7 + y * 13) % 5 == 0 || (x / 2 + y / 3) % 4 == 0) {
                    60.0
                } else {
                    160.0
                }
            } else {
                20.0
            }
        })
        .unwrap();
        (img, SegMask::from_fn(48, 48, "d", "s", inside).unwrap())
    }

    #[test]
    fn masked_stats_flat_vs_textured() {
        let p = DcedParams::new(3, 0.0, 25.0, 25.0, 200.0).unwrap();
        let (flat, m) = disc_scene(false);
        let s = masked_edge_stats(&flat, &m, &p, BoundaryGuard::Eroded).unwrap();
        assert_eq!(s.edge_ratio, 0.0);
        assert_eq!(s.mask_count, m.area());
        let (tex, m) = disc_scene(true);
        let s2 = masked_edge_stats(&tex, &m, &p, BoundaryGuard::Eroded).unwrap();
        assert!(s2.edge_ratio > s.edge_ratio);
        assert_eq!(s2.diff_count, s2.wide_count - s2.narrow_count);
        // Without the guard the contour contributes.
        let lit = masked_edge_stats(&flat, &m, &p, BoundaryGuard::None).unwrap();
        assert!(lit.wide_count > 0);
    }

    #[test]
    fn masked_stats_tiny_mask_flags_eroded_empty() {
        let img = ImageGray::filled(20, 20, 50.0).unwrap();
        let m = SegMask::from_fn(20, 20, "t", "s", |x, y| (8..11).contains(&x) && (8..11).contains(&y))
            .unwrap();
        let p = DcedParams::new(5, 0.0, 25.0, 25.0, 50.0).unwrap();
        let s = masked_edge_stats(&img, &m, &p, BoundaryGuard::Eroded).unwrap();
        assert!(s.eroded_empty);
        assert_eq!(s.edge_ratio, 0.0);
        let other = SegMask::from_fn(10, 10, "t", "s", |x, _| x == 1).unwrap();
        assert!(masked_edge_stats(&img, &other, &p, BoundaryGuard::Eroded).is_err());
    }

    #[test]
    fn ratio_formula() {
        assert!((edge_ratio(120, 40, 400) - 0.2).abs() < 1e-15);
    }
}
