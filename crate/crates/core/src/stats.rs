//! Small statistics helpers: angle wrapping, circular agreement scores and
//! nearest-rank cut-offs.

use std::f64::consts::{PI, TAU};

/// Reduces an angle into `[0, 2π)`.
pub fn wrap_tau(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Reduces an angle into `(-π, π]`.
pub fn wrap_pi(x: f64) -> f64 {
    let r = wrap_tau(x);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Agreement between two circle-valued samples, invariant under a global
/// rotation and reflection of either one.
///
/// Returns `max_{s=±1} |mean exp(i(a_k - s b_k))|`, which is 1 exactly when
/// `a = ±b + const` and close to 0 for unrelated angles.
pub fn circular_correlation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    let n = a.len() as f64;
    let resultant = |sign: f64| {
        let (mut c, mut s) = (0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            let d = x - sign * y;
            c += d.cos();
            s += d.sin();
        }
        (c / n).hypot(s / n)
    };
    resultant(1.0).max(resultant(-1.0))
}

/// Net number of turns `values` makes while `reference` goes once around the
/// circle in increasing order.
pub fn winding_number(values: &[f64], reference: &[f64]) -> i64 {
    assert_eq!(values.len(), reference.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| wrap_tau(reference[i]).total_cmp(&wrap_tau(reference[j])));
    let mut total = 0.0;
    for w in 0..order.len() {
        let i = order[w];
        let j = order[(w + 1) % order.len()];
        total += wrap_pi(values[j] - values[i]);
    }
    (total / TAU).round() as i64
}

/// Number of records kept by a "top `percent` percent" cut on `n` records:
/// `ceil(percent · n / 100)`, at least one when `n > 0`.
pub fn top_count(n: usize, percent: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let m = (percent / 100.0 * n as f64 - 1e-9).ceil() as usize;
    m.clamp(1, n)
}

/// Cut-off value for keeping the top `percent` percent of `values`: the
/// `top_count`-th largest value. Everything `>=` the cut-off is kept, so ties
/// at the boundary are retained.
pub fn top_percent_cutoff(values: &[f64], percent: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Some(sorted[top_count(values.len(), percent) - 1])
}

/// Nearest-rank percentile (`p` in `[0, 100]`) of `values`.
pub fn nearest_rank_percentile(sorted_ascending: &[f64], p: f64) -> f64 {
    assert!(!sorted_ascending.is_empty());
    let n = sorted_ascending.len();
    let rank = ((p / 100.0) * n as f64 - 1e-9).ceil() as usize;
    sorted_ascending[rank.clamp(1, n) - 1]
}
