//! Unfiltered enumeration of threshold tuples.

/// `(K, wth_min, wth_max, nth_min, nth_max)` for every one of the
/// `|values|^4 * |kernels|` raw tuples that meets the dual-filter
/// constraints, in lexicographic order.
pub fn admissible(values: &[f64], kernels: &[usize]) -> Vec<(usize, f64, f64, f64, f64)> {
    let mut ks = kernels.to_vec();
    ks.sort_unstable();
    let mut out = Vec::new();
    for &k in &ks {
        for &a in values {
            for &b in values {
                for &c in values {
                    for &d in values {
                        if b > a && c >= a && d > c && d > b {
                            out.push((k, a, b, c, d));
                        }
                    }
                }
            }
        }
    }
    out
}
