//! Imputed data and standardized cellwise residuals of a fitted model.

use nalgebra::DMatrix;

use crate::data::{subset_indices, CellMask, DataSet, MixtureParams, Posterior};
use crate::error::Result;
use crate::gauss::{condition_block, condition_cell, Workspace};

/// Reliable cells as observed; every other cell replaced by its conditional
/// mean under the row's MAP component.
pub fn impute(data: &DataSet, mask: &CellMask, params: &MixtureParams, posterior: &Posterior) -> Result<DMatrix<f64>> {
    let labels = posterior.map_labels();
    let mut out = data.values().clone();
    let mut ws = Workspace::new();
    for i in 0..data.n() {
        let (rel, unrel) = subset_indices(&mask.row(i));
        if unrel.is_empty() {
            continue;
        }
        let g = labels[i];
        let (_, m) = condition_block(&data.row(i), &rel, &unrel, &params.means[g], &params.covariances[g], &mut ws)?;
        for (a, &j) in unrel.iter().enumerate() {
            out[(i, j)] = m.cond_mean[a];
        }
    }
    Ok(out)
}

/// (x_ij − x̂_ij)/√Ĉ_ij under the row's MAP component, conditioning on the
/// row's reliable cells other than j. NaN at missing cells.
pub fn standardized_residuals(data: &DataSet, mask: &CellMask, params: &MixtureParams, posterior: &Posterior) -> Result<DMatrix<f64>> {
    let labels = posterior.map_labels();
    let (n, p) = (data.n(), data.p());
    let mut out = DMatrix::from_element(n, p, f64::NAN);
    let mut ws = Workspace::new();
    let mut rest = Vec::with_capacity(p);
    for i in 0..n {
        let x = data.row(i);
        let w = mask.row(i);
        let g = labels[i];
        for j in 0..p {
            if !data.is_observed(i, j) {
                continue;
            }
            rest.clear();
            rest.extend((0..p).filter(|&k| k != j && w[k]));
            let cc = condition_cell(&x, &rest, j, &params.means[g], &params.covariances[g], &mut ws)?;
            out[(i, j)] = (x[j] - cc.mean) / cc.var.sqrt();
        }
    }
    Ok(out)
}

/// Cut-off √χ²_{1,0.99} for flagging residuals.
pub fn residual_threshold() -> f64 {
    crate::stats::chi2_quantile(1.0, 0.99).sqrt()
}
