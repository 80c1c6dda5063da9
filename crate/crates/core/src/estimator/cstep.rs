//! C-step: column-by-column update of the reliability mask.

use nalgebra::DMatrix;

use super::objective::weighted_component_sum;
use crate::data::{CellMask, DataSet, MixtureParams, Posterior};
use crate::error::Result;
use crate::gauss::{condition_cell, Workspace};
use crate::stats::log_sum_exp;

/// Reliable cells of `w` other than `j`.
fn rest_of(w: &[bool], j: usize, out: &mut Vec<usize>) {
    out.clear();
    out.extend(w.iter().enumerate().filter(|&(k, &r)| r && k != j).map(|(k, _)| k));
}

fn delta_unpenalized_on(x: &[f64], rest: &[usize], j: usize, params: &MixtureParams, ws: &mut Workspace) -> Result<f64> {
    let g = params.g();
    let mut with = Vec::with_capacity(g);
    let mut without = Vec::with_capacity(g);
    for k in 0..g {
        let cc = condition_cell(x, rest, j, &params.means[k], &params.covariances[k], ws)?;
        let base = params.weights[k].ln() + cc.log_density_rest;
        without.push(base);
        with.push(base + cc.log_density_cell(x[j]));
    }
    Ok(log_sum_exp(&with) - log_sum_exp(&without))
}

fn delta_penalized_on(
    x: &[f64],
    rest: &[usize],
    j: usize,
    params: &MixtureParams,
    z: &[f64],
    q: f64,
    ws: &mut Workspace,
) -> Result<f64> {
    let mut cell = Vec::with_capacity(params.g());
    for k in 0..params.g() {
        let cc = condition_cell(x, rest, j, &params.means[k], &params.covariances[k], ws)?;
        cell.push(cc.log_density_cell(x[j]));
    }
    Ok(weighted_component_sum(z, &cell) + q)
}

/// Change in the row contribution when cell `j` becomes reliable, all other
/// entries of `w` held fixed.
pub fn delta_unpenalized(x: &[f64], w: &[bool], j: usize, params: &MixtureParams) -> Result<f64> {
    let mut rest = Vec::new();
    rest_of(w, j, &mut rest);
    delta_unpenalized_on(x, &rest, j, params, &mut Workspace::new())
}

/// Posterior-weighted log-density of cell `j` given the other reliable cells
/// of `w`, plus the penalty `q` for flagging it.
pub fn delta_penalized(x: &[f64], w: &[bool], j: usize, params: &MixtureParams, z: &[f64], q: f64) -> Result<f64> {
    let mut rest = Vec::new();
    rest_of(w, j, &mut rest);
    delta_penalized_on(x, &rest, j, params, z, q, &mut Workspace::new())
}

/// New mask column from per-row scores; `None` marks a missing cell.
///
/// Unpenalized: exactly the `h` largest scores. Penalized: every nonnegative
/// score when there are more than `h` of them, else the `h` largest. Ties go
/// to the smaller row index.
pub fn update_mask_column(deltas: &[Option<f64>], h: usize, penalized: bool) -> Vec<bool> {
    let mut keep = vec![false; deltas.len()];
    if penalized {
        let nonneg = deltas.iter().filter(|d| matches!(d, Some(v) if *v >= 0.0)).count();
        if nonneg > h {
            for (k, d) in deltas.iter().enumerate() {
                keep[k] = matches!(d, Some(v) if *v >= 0.0);
            }
            return keep;
        }
    }
    let mut ranked: Vec<(usize, f64)> = deltas.iter().enumerate().filter_map(|(i, d)| d.map(|v| (i, v))).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for &(i, _) in ranked.iter().take(h) {
        keep[i] = true;
    }
    keep
}

/// Penalty ingredients for the penalized C-step: the tuning matrix and the
/// posterior evaluated at the current parameters and mask.
pub struct PenaltyTerms<'a> {
    pub q: &'a DMatrix<f64>,
    pub posterior: &'a Posterior,
}

/// Sequential sweep over columns 0..p, each conditioned on the columns
/// already updated in this sweep.
pub fn c_step(data: &DataSet, mask: &CellMask, params: &MixtureParams, h: usize, penalty: Option<&PenaltyTerms>) -> Result<CellMask> {
    let (n, p) = (data.n(), data.p());
    let rows: Vec<Vec<f64>> = (0..n).map(|i| data.row(i)).collect();
    let mut w: Vec<Vec<bool>> = (0..n).map(|i| mask.row(i)).collect();
    let mut ws = Workspace::new();
    let mut rest = Vec::with_capacity(p);
    let mut deltas = vec![None; n];
    for j in 0..p {
        for i in 0..n {
            deltas[i] = if data.is_observed(i, j) {
                rest_of(&w[i], j, &mut rest);
                Some(match penalty {
                    None => delta_unpenalized_on(&rows[i], &rest, j, params, &mut ws)?,
                    Some(pt) => {
                        let z = pt.posterior.row(i);
                        delta_penalized_on(&rows[i], &rest, j, params, &z, pt.q[(i, j)], &mut ws)?
                    }
                })
            } else {
                None
            };
        }
        let column = update_mask_column(&deltas, h, penalty.is_some());
        for i in 0..n {
            w[i][j] = column[i];
        }
    }
    Ok(CellMask::new(DMatrix::from_fn(n, p, |i, j| w[i][j])))
}
