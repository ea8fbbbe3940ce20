//! Dense-bitmap versions of the mask and blending operations.

use crate::linalg::solve;

/// Erosion by a `(2r+1)` square, testing every window pixel.
pub fn erode(w: usize, h: usize, bits: &[bool], r: usize) -> Vec<bool> {
    let r = r as isize;
    let mut out = vec![false; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut all = true;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x + dx, y + dy);
                    let inside = nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize;
                    if !inside || !bits[ny as usize * w + nx as usize] {
                        all = false;
                    }
                }
            }
            out[y as usize * w + x as usize] = all;
        }
    }
    out
}

/// Centroid, unit principal axis (sign unspecified) and eigenvalues
/// `(l1, l2)` of the pixel coordinate covariance, by power iteration on
/// the 2x2 matrix.
pub fn principal_axis(w: usize, bits: &[bool]) -> ((f64, f64), (f64, f64), (f64, f64)) {
    let pts: Vec<(f64, f64)> = bits
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| ((i % w) as f64, (i / w) as f64))
        .collect();
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut c = [[0.0; 2]; 2];
    for p in &pts {
        let d = [p.0 - cx, p.1 - cy];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] += d[i] * d[j] / n;
            }
        }
    }
    let tr = c[0][0] + c[1][1];
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let (l1, l2) = (tr / 2.0 + disc, tr / 2.0 - disc);
    let mut v = (1.0, 0.3);
    for _ in 0..500 {
        let nv = (c[0][0] * v.0 + c[0][1] * v.1, c[1][0] * v.0 + c[1][1] * v.1);
        let norm = (nv.0 * nv.0 + nv.1 * nv.1).sqrt();
        if norm == 0.0 {
            break;
        }
        v = (nv.0 / norm, nv.1 / norm);
    }
    ((cx, cy), v, (l1, l2))
}

/// Solves the region's 4-neighbour Poisson system densely. Returns the
/// raster with region pixels replaced by the solution.
pub fn poisson(w: usize, region: &[bool], guidance: &[f64], boundary: &[f64]) -> Vec<f64> {
    let unknowns: Vec<usize> = (0..region.len()).filter(|&i| region[i]).collect();
    let n = unknowns.len();
    let pos = |p: usize| unknowns.iter().position(|&u| u == p);
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for (row, &p) in unknowns.iter().enumerate() {
        a[row][row] = 4.0;
        for q in [p - 1, p + 1, p - w, p + w] {
            b[row] += guidance[p] - guidance[q];
            match pos(q) {
                Some(col) => a[row][col] -= 1.0,
                None => b[row] += boundary[q],
            }
        }
    }
    let x = solve(a, b);
    let mut out = boundary.to_vec();
    for (v, &p) in x.into_iter().zip(&unknowns) {
        out[p] = v;
    }
    out
}
