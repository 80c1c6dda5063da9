//! Observed-data objective of a mask and a parameter set, with the matching
//! posterior as a by-product.

use nalgebra::DMatrix;

use crate::data::{subset_indices, CellMask, DataSet, MixtureParams, Posterior};
use crate::error::Result;
use crate::gauss::{log_density_on, Workspace};
use crate::stats::{log_sum_exp, sorted_sum};

/// ln π_g + ln φ(x[idx]; μ_g, Σ_g) for every component.
pub(crate) fn component_log_terms(
    x: &[f64],
    idx: &[usize],
    params: &MixtureParams,
    ws: &mut Workspace,
    out: &mut Vec<f64>,
) -> Result<()> {
    out.clear();
    for g in 0..params.g() {
        let ld = log_density_on(x, idx, &params.means[g], &params.covariances[g], ws)?;
        out.push(params.weights[g].ln() + ld);
    }
    Ok(())
}

/// ln Σ_g π_g φ(x[w]; μ_g[w], Σ_g[w, w]); zero for an empty mask.
pub fn row_contribution(x: &[f64], w: &[bool], params: &MixtureParams) -> Result<f64> {
    let (idx, _) = subset_indices(w);
    if idx.is_empty() {
        return Ok(0.0);
    }
    let mut terms = Vec::with_capacity(params.g());
    component_log_terms(x, &idx, params, &mut Workspace::new(), &mut terms)?;
    Ok(log_sum_exp(&terms))
}

/// Softmax of log terms whose log-normalizer is `lse`.
pub(crate) fn normalize(terms: &[f64], lse: f64) -> Vec<f64> {
    terms.iter().map(|&t| (t - lse).exp()).collect()
}

/// Observed log-likelihood of `params` on the reliable cells of `mask` and
/// the posterior memberships it implies.
pub fn evaluate(data: &DataSet, mask: &CellMask, params: &MixtureParams) -> Result<(f64, Posterior)> {
    let (n, g) = (data.n(), params.g());
    let mut ws = Workspace::new();
    let mut terms = Vec::with_capacity(g);
    let mut z = DMatrix::zeros(n, g);
    let mut total = 0.0;
    for i in 0..n {
        let x = data.row(i);
        let (idx, _) = subset_indices(&mask.row(i));
        component_log_terms(&x, &idx, params, &mut ws, &mut terms)?;
        let lse = log_sum_exp(&terms);
        for (k, v) in normalize(&terms, lse).into_iter().enumerate() {
            z[(i, k)] = v;
        }
        if !idx.is_empty() {
            total += lse;
        }
    }
    Ok((total, Posterior::new(z)))
}

/// Σ q_ij over observed cells that the mask flags.
pub fn penalty_cost(data: &DataSet, mask: &CellMask, q: &DMatrix<f64>) -> f64 {
    let mut cost = 0.0;
    for i in 0..data.n() {
        for j in 0..data.p() {
            if data.is_observed(i, j) && !mask.get(i, j) {
                cost += q[(i, j)];
            }
        }
    }
    cost
}

/// Sum of posterior-weighted terms that does not depend on component order.
pub(crate) fn weighted_component_sum(weights: &[f64], values: &[f64]) -> f64 {
    let mut terms: Vec<f64> = weights.iter().zip(values).map(|(w, v)| w * v).collect();
    sorted_sum(&mut terms)
}
