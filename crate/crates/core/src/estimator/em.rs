//! E-step (posteriors and conditional completions) and M-step.

use nalgebra::{DMatrix, DVector};

use super::objective::normalize;
use crate::constraints::constrain_covariances;
use crate::data::{subset_indices, CellMask, DataSet, MixtureParams, Posterior};
use crate::error::{Error, Result};
use crate::gauss::{condition_block, Workspace};
use crate::stats::log_sum_exp;

/// Smallest expected component size the M-step accepts.
pub const MIN_COMPONENT_SIZE: f64 = 1e-10;

/// Conditional expectations of the unreliable cells of every row under
/// every component.
#[derive(Debug, Clone)]
pub struct Completion {
    /// Per component: rows with unreliable cells replaced by their
    /// conditional means.
    pub rows: Vec<DMatrix<f64>>,
    /// Per component and row: conditional covariance of the unreliable
    /// block, indexed like `unreliable[i]`.
    pub cond_covs: Vec<Vec<DMatrix<f64>>>,
    /// Per row: unreliable coordinates, ascending.
    pub unreliable: Vec<Vec<usize>>,
}

pub fn e_step(data: &DataSet, mask: &CellMask, params: &MixtureParams) -> Result<(Posterior, Completion)> {
    let (n, p, g) = (data.n(), data.p(), params.g());
    let mut ws = Workspace::new();
    let mut z = DMatrix::zeros(n, g);
    let mut rows = vec![DMatrix::zeros(n, p); g];
    let mut cond_covs = vec![Vec::with_capacity(n); g];
    let mut unreliable = Vec::with_capacity(n);
    let mut terms = Vec::with_capacity(g);
    for i in 0..n {
        let x = data.row(i);
        let (rel, unrel) = subset_indices(&mask.row(i));
        terms.clear();
        for k in 0..g {
            let (ld, moments) = condition_block(&x, &rel, &unrel, &params.means[k], &params.covariances[k], &mut ws)?;
            terms.push(params.weights[k].ln() + ld);
            for &j in &rel {
                rows[k][(i, j)] = x[j];
            }
            for (a, &j) in unrel.iter().enumerate() {
                rows[k][(i, j)] = moments.cond_mean[a];
            }
            cond_covs[k].push(moments.cond_cov);
        }
        let lse = log_sum_exp(&terms);
        for (k, v) in normalize(&terms, lse).into_iter().enumerate() {
            z[(i, k)] = v;
        }
        unreliable.push(unrel);
    }
    Ok((Posterior::new(z), Completion { rows, cond_covs, unreliable }))
}

/// Weighted moments of the completed rows followed by the eigenvalue-ratio
/// constraint with bound `c`.
pub fn m_step(posterior: &Posterior, completion: &Completion, c: f64) -> Result<MixtureParams> {
    let (n, g) = (posterior.n(), posterior.g());
    let p = completion.rows.first().map_or(0, |r| r.ncols());
    let mut sizes = Vec::with_capacity(g);
    let mut means = Vec::with_capacity(g);
    let mut covs = Vec::with_capacity(g);
    for k in 0..g {
        let size: f64 = posterior.z.column(k).sum();
        if !(size >= MIN_COMPONENT_SIZE) {
            return Err(Error::EmptyComponent { component: k, size });
        }
        let rows = &completion.rows[k];
        let mut mean = DVector::zeros(p);
        for i in 0..n {
            mean += rows.row(i).transpose() * posterior.z[(i, k)];
        }
        mean /= size;
        let mut scatter = DMatrix::zeros(p, p);
        for i in 0..n {
            let zi = posterior.z[(i, k)];
            if zi == 0.0 {
                continue;
            }
            let d = rows.row(i).transpose() - &mean;
            scatter.syger(zi, &d, &d, 1.0);
            let unrel = &completion.unreliable[i];
            let cc = &completion.cond_covs[k][i];
            for (a, &ja) in unrel.iter().enumerate() {
                for (b, &jb) in unrel.iter().enumerate().take(a + 1) {
                    scatter[(ja.max(jb), ja.min(jb))] += zi * cc[(a, b)];
                }
            }
        }
        scatter.fill_upper_triangle_with_lower_triangle();
        scatter /= size;
        sizes.push(size);
        means.push(mean);
        covs.push(scatter);
    }
    let covariances = constrain_covariances(&covs, &sizes, c)?;
    let weights = sizes.iter().map(|s| s / n as f64).collect();
    Ok(MixtureParams { weights, means, covariances })
}
