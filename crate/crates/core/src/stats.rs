//! Scalar helpers: χ² quantiles, order-independent sums, empirical quantiles.

use statrs::distribution::{ChiSquared, ContinuousCDF};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Quantile of the χ² distribution with `dof` degrees of freedom.
pub fn chi2_quantile(dof: f64, prob: f64) -> f64 {
    ChiSquared::new(dof).expect("positive degrees of freedom").inverse_cdf(prob)
}

/// Sum whose result does not depend on the order of `terms`.
///
/// Terms are sorted before accumulation so relabelling mixture components
/// leaves every cross-component sum bitwise unchanged.
pub fn sorted_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

/// ln Σ exp(t) with max subtraction; order-independent like [`sorted_sum`].
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let mut shifted: Vec<f64> = terms.iter().map(|&t| (t - max).exp()).collect();
    max + sorted_sum(&mut shifted).ln()
}

/// Empirical quantile with linear interpolation between order statistics
/// (R's default, type 7). `values` must be non-empty.
pub fn quantile_linear(values: &[f64], prob: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let pos = prob.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// ceil(rate · total) robust to representation noise in `rate`.
pub fn count_for_rate(rate: f64, total: usize) -> usize {
    ((rate * total as f64) - 1e-9).ceil().max(0.0) as usize
}
