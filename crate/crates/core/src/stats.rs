//! Small shared statistics helpers.
//!
//! Two quantile conventions coexist on purpose:
//!
//! - [`interp_quantile`] is the linear-interpolation rule (rank
//!   `1 + (n-1)q` on the sorted sample) used for the benchmark's metric
//!   summaries.
//! - [`empirical_quantile`] is the empirical-CDF inverse (the
//!   `ceil(n*q)`-th order statistic) used for weight clipping and similar
//!   order-statistic cutoffs.

/// Arithmetic mean. Returns NaN on an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (ddof = 1). Zero for fewer than two values.
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Weighted mean `sum(w*v) / sum(w)`. Returns None when the weight sum is
/// not strictly positive.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> Option<f64> {
    debug_assert_eq!(values.len(), weights.len());
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return None;
    }
    let num: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    Some(num / wsum)
}

/// Linear-interpolation quantile at rank `1 + (n-1)q` of the sorted input.
///
/// `q` must lie in `[0, 1]` and `sorted` must be non-empty and ascending.
pub fn interp_quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty set");
    assert!((0.0..=1.0).contains(&q), "quantile level out of range");
    let rank = (sorted.len() - 1) as f64 * q;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = rank - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Empirical-CDF quantile: the smallest value v with `F(v) >= q`, i.e. the
/// `ceil(n*q)`-th order statistic (1-indexed). `q = 0` gives the minimum.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty set");
    assert!((0.0..=1.0).contains(&q), "quantile level out of range");
    let n = sorted.len() as f64;
    let rank = (n * q).ceil() as usize;
    sorted[rank.saturating_sub(1).min(sorted.len() - 1)]
}

/// Sort a copy ascending; NaNs would violate the totality assumption and
/// panic via the comparator.
pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in sort"));
    v
}
