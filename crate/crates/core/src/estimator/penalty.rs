//! Cellwise penalty matrix and Aitken stopping rule.

use nalgebra::DMatrix;

use super::objective::weighted_component_sum;
use crate::data::{MixtureParams, Posterior};
use crate::error::{Error, Result};
use crate::stats::{chi2_quantile, LN_2PI};

/// q_ij = ½[ Σ_g z_ig ln(1 / (Σ_g⁻¹)_jj) + χ²_{1,1−α} + ln 2π ].
pub fn compute_penalty(params: &MixtureParams, posterior: &Posterior, alpha: f64) -> Result<DMatrix<f64>> {
    let (n, p, g) = (posterior.n(), params.p(), params.g());
    let mut log_partial = Vec::with_capacity(g);
    for cov in &params.covariances {
        let chol = cov.clone().cholesky().ok_or(Error::SingularSubmatrix)?;
        let prec = chol.inverse();
        log_partial.push((0..p).map(|j| -prec[(j, j)].ln()).collect::<Vec<f64>>());
    }
    let constant = chi2_quantile(1.0, 1.0 - alpha) + LN_2PI;
    let mut q = DMatrix::zeros(n, p);
    let mut vals = vec![0.0; g];
    for i in 0..n {
        let z = posterior.row(i);
        for j in 0..p {
            for k in 0..g {
                vals[k] = log_partial[k][j];
            }
            q[(i, j)] = 0.5 * (weighted_component_sum(&z, &vals) + constant);
        }
    }
    Ok(q)
}

/// Aitken-accelerated stopping rule on three consecutive objective values.
///
/// The extrapolated limit is ℓ₂ + (ℓ₃ − ℓ₂)/(1 − a) with
/// a = (ℓ₃ − ℓ₂)/(ℓ₂ − ℓ₁); convergence means it lies within `epsilon` of ℓ₂.
pub fn aitken_converged(l1: f64, l2: f64, l3: f64, epsilon: f64) -> bool {
    let (d1, d2) = (l2 - l1, l3 - l2);
    if d1 == 0.0 {
        return d2.abs() <= 1e-12;
    }
    let a = d2 / d1;
    if a >= 1.0 {
        return false;
    }
    d2 / (1.0 - a) < epsilon
}
