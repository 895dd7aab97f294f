//! Smooth k-nearest-neighbor membership weights.
//!
//! A soft threshold τ is taken as the midpoint of the LSE-smoothed k-th and
//! (k+1)-th order statistics of the candidate distances (temperature
//! `lse_scale`); membership is then w_j = sigmoid((τ - r_j)/sigmoid_scale).
//! Every step is smooth in the distances, including through exact rank ties,
//! so energies built on these weights stay differentiable as neighbors swap.

use serde::{Deserialize, Serialize};

/// Knobs for the soft selection. `use_low_mem` is accepted as a hint only.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SoftKnnConfig {
    pub sigmoid_scale: f64,
    pub lse_scale: f64,
    /// Smooth membership when true; hard top-k indicator when false
    /// (negative control for smoothness checks).
    pub soft: bool,
    pub use_low_mem: bool,
}

impl Default for SoftKnnConfig {
    fn default() -> Self {
        SoftKnnConfig { sigmoid_scale: 0.2, lse_scale: 0.1, soft: true, use_low_mem: true }
    }
}

/// Margin added above the smoothed maximum when every candidate is selected
/// (fewer than k+1 candidates), in units of sigmoid_scale.
pub const FULL_SELECT_MARGIN: f64 = 10.0;

/// |x| smoothed as t·ln(e^{x/t} + e^{-x/t}); C^∞, equals |x| + t·ln 2 at 0.
#[inline]
pub fn smooth_abs(x: f64, t: f64) -> f64 {
    let a = x.abs();
    a + t * (-2.0 * a / t).exp().ln_1p()
}

/// LSE-smoothed m-th smallest of `r` (m is 1-based), temperature `t`.
/// Soft-sort row: score_j = (-(n+1-2m)·r_j - Σ_i |r_j - r_i|_t) / t.
pub fn smooth_order_statistic(r: &[f64], m: usize, t: f64) -> f64 {
    let n = r.len();
    debug_assert!(m >= 1 && m <= n);
    let coeff = (n as f64) + 1.0 - 2.0 * (m as f64);
    let mut scores = Vec::with_capacity(n);
    for &rj in r {
        let mut pairwise = 0.0;
        for &ri in r {
            pairwise += smooth_abs(rj - ri, t);
        }
        scores.push((-coeff * rj - pairwise) / t);
    }
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut acc = 0.0;
    for (s, &rj) in scores.iter().zip(r.iter()) {
        let e = (s - mx).exp();
        z += e;
        acc += e * rj;
    }
    acc / z
}

/// Soft threshold τ for selecting ~k of the given candidate distances.
pub fn soft_threshold(distances: &[f64], k: usize, sigmoid_scale: f64, lse_scale: f64) -> f64 {
    let n = distances.len();
    if n <= k {
        smooth_order_statistic(distances, n, lse_scale) + FULL_SELECT_MARGIN * sigmoid_scale
    } else {
        let lo = smooth_order_statistic(distances, k, lse_scale);
        let hi = smooth_order_statistic(distances, k + 1, lse_scale);
        0.5 * (lo + hi)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Smooth membership weights in (0,1) for each candidate distance.
pub fn soft_knn_weights(
    distances: &[f64],
    k: usize,
    sigmoid_scale: f64,
    lse_scale: f64,
) -> Vec<f64> {
    if distances.is_empty() || k == 0 {
        return Vec::new();
    }
    let tau = soft_threshold(distances, k, sigmoid_scale, lse_scale);
    distances.iter().map(|&r| sigmoid((tau - r) / sigmoid_scale)).collect()
}

/// Hard top-k indicator (ties broken by candidate order). Negative control.
pub fn hard_knn_weights(distances: &[f64], k: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].partial_cmp(&distances[b]).unwrap().then(a.cmp(&b)));
    let mut w = vec![0.0; distances.len()];
    for &i in order.iter().take(k) {
        w[i] = 1.0;
    }
    w
}
