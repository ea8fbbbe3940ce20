//! Canny with a dense 2-D Gaussian, per-pixel suppression and hysteresis by
//! breadth-first search from every strong pixel separately.

use std::collections::VecDeque;

pub fn sigma(k: usize) -> f64 {
    0.3 * ((k as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

fn clamped(px: &[f64], w: usize, h: usize, x: isize, y: isize) -> f64 {
    let x = x.max(0).min(w as isize - 1) as usize;
    let y = y.max(0).min(h as isize - 1) as usize;
    px[y * w + x]
}

/// Dense `k x k` Gaussian with replicated borders.
pub fn blur(w: usize, h: usize, px: &[f64], k: usize) -> Vec<f64> {
    if k == 1 {
        return px.to_vec();
    }
    let r = (k / 2) as isize;
    let s = sigma(k);
    let mut kernel = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            kernel.push((dx, dy, (-((dx * dx + dy * dy) as f64) / (2.0 * s * s)).exp()));
        }
    }
    let total: f64 = kernel.iter().map(|k| k.2).sum();
    let lo = px.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = px.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for &(dx, dy, wt) in &kernel {
                acc += wt / total * clamped(px, w, h, x as isize + dx, y as isize + dy);
            }
            out[y * w + x] = acc.max(lo).min(hi);
        }
    }
    out
}

/// Sobel `(gx, gy)` with replicated borders.
pub fn sobel(w: usize, h: usize, px: &[f64]) -> (Vec<f64>, Vec<f64>) {
    const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut sx, mut sy) = (0.0, 0.0);
            for j in 0..3 {
                for i in 0..3 {
                    let v = clamped(px, w, h, x as isize + i as isize - 1, y as isize + j as isize - 1);
                    sx += KX[j][i] * v;
                    sy += KX[i][j] * v;
                }
            }
            gx[y * w + x] = sx;
            gy[y * w + x] = sy;
        }
    }
    (gx, gy)
}

/// Neighbour offset across the edge, from slope comparisons.
fn across(gx: f64, gy: f64) -> (isize, isize) {
    let (ax, ay) = (gx.abs(), gy.abs());
    if ay < ax * 22.5f64.to_radians().tan() {
        (1, 0)
    } else if ay >= ax * 67.5f64.to_radians().tan() {
        (0, 1)
    } else if (gx > 0.0) == (gy > 0.0) {
        (1, 1)
    } else {
        (-1, 1)
    }
}

/// Scaled magnitude after non-maximum suppression. A pixel survives when it
/// strictly beats the neighbour behind it and at least ties the one ahead.
pub fn suppressed(w: usize, h: usize, px: &[f64], k: usize) -> Vec<f64> {
    let b = blur(w, h, px, k);
    let (gx, gy) = sobel(w, h, &b);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| 0.25 * (a * a + b * b).sqrt()).collect();
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
            let (dx, dy) = across(gx[i], gy[i]);
            let (x, y) = (x as isize, y as isize);
            let tol = 1e-9 * (1.0 + m);
            if m - at(x - dx, y - dy) > tol && m >= at(x + dx, y + dy) - tol {
                out[i] = m;
            }
        }
    }
    out
}

/// Union of the 8-connected weak regions grown from each strong pixel.
pub fn hysteresis(w: usize, h: usize, mag: &[f64], th_min: f64, th_max: f64) -> Vec<bool> {
    let mut edges = vec![false; w * h];
    for seed in 0..w * h {
        if mag[seed] <= th_max {
            continue;
        }
        let mut seen = vec![false; w * h];
        let mut queue = VecDeque::from([seed]);
        seen[seed] = true;
        while let Some(p) = queue.pop_front() {
            edges[p] = true;
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if !seen[q] && mag[q] > th_min {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    edges
}

pub fn canny(w: usize, h: usize, px: &[f64], k: usize, th_min: f64, th_max: f64) -> Vec<bool> {
    hysteresis(w, h, &suppressed(w, h, px, k), th_min, th_max)
}
