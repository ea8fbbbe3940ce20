//! Raster types and the low-level kernels everything else is built on:
//! luminance conversion, separable Gaussian smoothing, Sobel gradients and
//! the principal axis of a binary mask.
//!
//! All borders use edge-value replication.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masks::SegMask;

/// An 8-bit RGB raster, row-major, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRgb {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions { width, height });
        }
        let expected = width * height * 3;
        if pixels.len() != expected {
            return Err(Error::BufferLength {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// A canvas filled with one color.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, pixels)
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

    pub fn as_raw(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copies the rectangle `[x0, x0 + w) x [y0, y0 + h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + w * 3]);
        }
        Self::new(w, h, pixels)
    }
}

/// A single-channel raster of intensities in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGray {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl ImageGray {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions { width, height });
        }
        if pixels.len() != width * height {
            return Err(Error::BufferLength {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        if let Some(&bad) = pixels
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 255.0)
        {
            return Err(Error::InvalidIntensity(bad));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image from a closure evaluated at every `(x, y)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
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

    pub fn as_slice(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn transpose(&self) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for x in 0..self.width {
            for y in 0..self.height {
                pixels.push(self.get(x, y));
            }
        }
        Self {
            width: self.height,
            height: self.width,
            pixels,
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let start = y * self.width + x0;
            pixels.extend_from_slice(&self.pixels[start..start + w]);
        }
        Self::new(w, h, pixels)
    }

    /// Sum of absolute differences between 4-neighbours.
    pub fn total_variation(&self) -> f64 {
        let mut tv = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(x, y);
                if x + 1 < self.width {
                    tv += (self.get(x + 1, y) - v).abs();
                }
                if y + 1 < self.height {
                    tv += (self.get(x, y + 1) - v).abs();
                }
            }
        }
        tv
    }
}

/// Sobel derivatives of a grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
    /// `atan2(gy, gx)` in radians; `y` grows downwards.
    pub direction: Vec<f64>,
}

/// Centroid and dominant orientation of a binary mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrincipalAxis {
    pub centroid: (f64, f64),
    /// Unit vector, canonicalized to `x > 0` (or `x == 0`, `y > 0`).
    pub axis: (f64, f64),
    /// Larger over smaller covariance eigenvalue; infinite for collinear masks.
    pub elongation: f64,
    pub degenerate: bool,
}

const DEGENERATE_RATIO: f64 = 1.0 + 1e-6;

/// Rec. 601 luminance.
pub fn to_grayscale(img: &ImageRgb) -> ImageGray {
    let pixels = img
        .as_raw()
        .chunks_exact(3)
        .map(|p| {
            let v = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
            v.clamp(0.0, 255.0)
        })
        .collect();
    ImageGray {
        width: img.width(),
        height: img.height(),
        pixels,
    }
}

/// Sigma used for a `K x K` smoothing kernel when only `K` is tuned.
pub fn sigma_for_kernel(kernel_size: usize) -> f64 {
    0.3 * ((kernel_size as f64 - 1.0) / 2.0 - 1.0) + 0.8
}

fn check_kernel(kernel_size: usize) -> Result<()> {
    if kernel_size == 0 || kernel_size % 2 == 0 {
        return Err(Error::InvalidKernelSize(kernel_size));
    }
    Ok(())
}

/// Normalized 1-D Gaussian taps, `kernel_size` long.
pub fn gaussian_kernel(kernel_size: usize, sigma: f64) -> Result<Vec<f64>> {
    check_kernel(kernel_size)?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidSigma(sigma));
    }
    let r = (kernel_size / 2) as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    Ok(taps)
}

/// Separable Gaussian smoothing with a `kernel_size`-tap kernel.
///
/// Output is clamped to the input's value range so floating-point rounding
/// of the tap sum can never push a pixel outside it.
pub fn gaussian_blur(img: &ImageGray, kernel_size: usize, sigma: f64) -> Result<ImageGray> {
    let taps = gaussian_kernel(kernel_size, sigma)?;
    if kernel_size == 1 {
        return Ok(img.clone());
    }
    let (w, h) = img.dims();
    let r = (kernel_size / 2) as isize;
    let (lo, hi) = img
        .pixels
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let clamp_x = |x: isize| x.clamp(0, w as isize - 1) as usize;
    let clamp_y = |y: isize| y.clamp(0, h as isize - 1) as usize;

    let mut horizontal = vec![0.0; w * h];
    for y in 0..h {
        let row = &img.pixels[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, tap) in taps.iter().enumerate() {
                acc += tap * row[clamp_x(x as isize + k as isize - r)];
            }
            horizontal[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, tap) in taps.iter().enumerate() {
                acc += tap * horizontal[clamp_y(y as isize + k as isize - r) * w + x];
            }
            out[y * w + x] = acc.clamp(lo, hi);
        }
    }
    Ok(ImageGray {
        width: w,
        height: h,
        pixels: out,
    })
}

/// 3x3 Sobel derivatives with replicated borders.
pub fn sobel_gradients(img: &ImageGray) -> Result<GradientField> {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
        });
    }
    let at = |x: isize, y: isize| {
        let cx = x.clamp(0, w as isize - 1) as usize;
        let cy = y.clamp(0, h as isize - 1) as usize;
        img.pixels[cy * w + cx]
    };
    let n = w * h;
    let mut gx = Vec::with_capacity(n);
    let mut gy = Vec::with_capacity(n);
    let mut magnitude = Vec::with_capacity(n);
    let mut direction = Vec::with_capacity(n);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let dx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let dy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            gx.push(dx);
            gy.push(dy);
            magnitude.push(dx.hypot(dy));
            direction.push(dy.atan2(dx));
        }
    }
    Ok(GradientField {
        width: w,
        height: h,
        gx,
        gy,
        magnitude,
        direction,
    })
}

/// PCA of the foreground pixel coordinates of `mask`.
pub fn principal_axis(mask: &SegMask) -> Result<PrincipalAxis> {
    let area = mask.area();
    if area < 3 {
        return Err(Error::MaskTooSmall(area));
    }
    // Coordinates relative to the bounding-box origin keep the result exactly
    // translation invariant.
    let bbox = mask.bbox();
    let n = area as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (x, y) in mask.pixels() {
        sx += (x - bbox.x0) as f64;
        sy += (y - bbox.y0) as f64;
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut cxx, mut cyy, mut cxy) = (0.0, 0.0, 0.0);
    for (x, y) in mask.pixels() {
        let dx = (x - bbox.x0) as f64 - mx;
        let dy = (y - bbox.y0) as f64 - my;
        cxx += dx * dx;
        cyy += dy * dy;
        cxy += dx * dy;
    }
    cxx /= n;
    cyy /= n;
    cxy /= n;

    let mean = 0.5 * (cxx + cyy);
    let spread = (0.25 * (cxx - cyy) * (cxx - cyy) + cxy * cxy).sqrt();
    let (l1, l2) = (mean + spread, mean - spread);
    let elongation = if l2 > 0.0 { l1 / l2 } else { f64::INFINITY };
    let degenerate = elongation < DEGENERATE_RATIO;

    let axis = if degenerate {
        (1.0, 0.0)
    } else {
        // Two algebraically equivalent eigenvector forms; take the better
        // conditioned one.
        let a = (l1 - cyy, cxy);
        let b = (cxy, l1 - cxx);
        let (vx, vy) = if a.0.hypot(a.1) >= b.0.hypot(b.1) { a } else { b };
        let norm = vx.hypot(vy);
        canonicalize((vx / norm, vy / norm))
    };
    Ok(PrincipalAxis {
        centroid: (bbox.x0 as f64 + mx, bbox.y0 as f64 + my),
        axis,
        elongation,
        degenerate,
    })
}

/// Flips a direction vector into the half-plane `x > 0` (tie: `y > 0`).
pub fn canonicalize(v: (f64, f64)) -> (f64, f64) {
    if v.0 > 0.0 || (v.0 == 0.0 && v.1 > 0.0) {
        (v.0 + 0.0, v.1 + 0.0)
    } else {
        (-v.0 + 0.0, -v.1 + 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(w: usize, h: usize, f: impl FnMut(usize, usize) -> f64) -> ImageGray {
        ImageGray::from_fn(w, h, f).unwrap()
    }

    #[test]
    fn luminance_weights() {
        let img = ImageRgb::new(3, 1, vec![255, 255, 255, 0, 0, 0, 100, 200, 50]).unwrap();
        let g = to_grayscale(&img);
        assert_eq!(g.get(0, 0), 255.0);
        assert_eq!(g.get(1, 0), 0.0);
        assert!((g.get(2, 0) - 153.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(ImageRgb::new(2, 2, vec![0; 11]).is_err());
        assert!(ImageRgb::new(0, 2, vec![]).is_err());
        assert!(ImageGray::new(1, 1, vec![256.0]).is_err());
        assert!(ImageGray::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn blur_constant_and_identity() {
        let c = ImageGray::filled(7, 5, 42.0).unwrap();
        for k in [1, 3, 5, 9] {
            let b = gaussian_blur(&c, k, sigma_for_kernel(k).max(0.5)).unwrap();
            assert!(b.as_slice().iter().all(|&v| v == 42.0));
        }
        let noisy = gray(6, 6, |x, y| ((x * 37 + y * 11) % 255) as f64);
        assert_eq!(gaussian_blur(&noisy, 1, 1.0).unwrap(), noisy);
    }

    #[test]
    fn blur_rejects_even_kernel_and_bad_sigma() {
        let c = ImageGray::filled(4, 4, 1.0).unwrap();
        assert_eq!(
            gaussian_blur(&c, 4, 1.0),
            Err(Error::InvalidKernelSize(4))
        );
        assert_eq!(gaussian_blur(&c, 0, 1.0), Err(Error::InvalidKernelSize(0)));
        assert!(matches!(
            gaussian_blur(&c, 3, 0.0),
            Err(Error::InvalidSigma(_))
        ));
    }

    #[test]
    fn blur_impulse_matches_dense_kernel() {
        // Dense 2-D convolution of a unit impulse reproduces the outer product
        // of the 1-D taps.
        let sigma = sigma_for_kernel(3);
        let img = gray(5, 5, |x, y| if (x, y) == (2, 2) { 1.0 } else { 0.0 });
        let out = gaussian_blur(&img, 3, sigma).unwrap();
        let e = |i: f64| (-(i * i) / (2.0 * sigma * sigma)).exp();
        let mut dense = [[0.0; 3]; 3];
        let mut total = 0.0;
        for (j, row) in dense.iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = e(i as f64 - 1.0) * e(j as f64 - 1.0);
                total += *v;
            }
        }
        for j in 0..3 {
            for i in 0..3 {
                assert!((out.get(1 + i, 1 + j) - dense[j][i] / total).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sigma_mapping() {
        assert!((sigma_for_kernel(3) - 0.8).abs() < 1e-12);
        assert!((sigma_for_kernel(5) - 1.1).abs() < 1e-12);
        assert!((sigma_for_kernel(7) - 1.4).abs() < 1e-12);
    }

    #[test]
    fn sobel_constant_and_step() {
        let c = ImageGray::filled(5, 5, 9.0).unwrap();
        let g = sobel_gradients(&c).unwrap();
        assert!(g.magnitude.iter().all(|&m| m == 0.0));

        let step = gray(8, 8, |x, _| if x < 4 { 0.0 } else { 255.0 });
        let g = sobel_gradients(&step).unwrap();
        let max = g.gx.iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, 4.0 * 255.0);
        for y in 0..8 {
            assert_eq!(g.gx[y * 8 + 3], 1020.0);
            assert_eq!(g.gx[y * 8 + 4], 1020.0);
            assert_eq!(g.gy[y * 8 + 3], 0.0);
        }
        assert!(sobel_gradients(&ImageGray::filled(2, 9, 0.0).unwrap()).is_err());
    }

    #[test]
    fn sobel_transpose_swaps_axes() {
        let img = gray(7, 5, |x, y| ((x * x * 13 + y * 7 + x * y) % 256) as f64);
        let a = sobel_gradients(&img).unwrap();
        let b = sobel_gradients(&img.transpose()).unwrap();
        for y in 0..5 {
            for x in 0..7 {
                assert_eq!(a.gy[y * 7 + x], b.gx[x * 5 + y]);
                assert_eq!(a.gx[y * 7 + x], b.gy[x * 5 + y]);
            }
        }
    }

    #[test]
    fn canonical_half_plane() {
        assert_eq!(canonicalize((-0.6, 0.8)), (0.6, -0.8));
        assert_eq!(canonicalize((0.0, -1.0)), (0.0, 1.0));
        assert_eq!(canonicalize((1.0, 0.0)), (1.0, 0.0));
    }

    #[test]
    fn principal_axis_shapes() {
        let rect = SegMask::from_fn(60, 60, "r", "t", |x, y| {
            (10..51).contains(&x) && (20..31).contains(&y)
        })
        .unwrap();
        let pa = principal_axis(&rect).unwrap();
        assert_eq!(pa.axis, (1.0, 0.0));
        assert!((pa.centroid.0 - 30.0).abs() < 1e-12 && (pa.centroid.1 - 25.0).abs() < 1e-12);
        assert!(!pa.degenerate);

        let tall = SegMask::from_fn(60, 60, "r", "t", |x, y| {
            (20..31).contains(&x) && (10..51).contains(&y)
        })
        .unwrap();
        assert_eq!(principal_axis(&tall).unwrap().axis, (0.0, 1.0));

        let disc = SegMask::from_fn(41, 41, "d", "t", |x, y| {
            let (dx, dy) = (x as f64 - 20.0, y as f64 - 20.0);
            dx * dx + dy * dy <= 15.0 * 15.0
        })
        .unwrap();
        let pd = principal_axis(&disc).unwrap();
        assert!(pd.degenerate);
        assert_eq!(pd.axis, (1.0, 0.0));

        let two = SegMask::from_fn(5, 5, "d", "t", |x, y| y == 0 && x < 2).unwrap();
        assert_eq!(principal_axis(&two), Err(Error::MaskTooSmall(2)));
    }
}
