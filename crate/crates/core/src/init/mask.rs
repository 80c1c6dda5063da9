//! Initial reliability mask from univariate and bivariate trimmed clustering.

use nalgebra::DMatrix;

use super::tclust::mini_tclust;
use super::InitConfig;
use crate::data::{CellMask, DataSet};
use crate::error::Result;
use crate::rng::SeedStream;
use crate::stats::quantile_linear;

/// Smallest component Mahalanobis distance of each listed row, fitted by
/// trimmed clustering on those rows restricted to `cols`.
fn min_distances(data: &DataSet, rows: &[usize], cols: &[usize], g: usize, cfg: &InitConfig, stream: SeedStream) -> Result<Vec<f64>> {
    let x = DMatrix::from_fn(rows.len(), cols.len(), |a, b| data.value(rows[a], cols[b]));
    let fit = mini_tclust(&x, g, cfg.alpha_tclust, cfg.tclust_c, cfg.tclust_starts, cfg.tclust_iters, &mut stream.rng())?;
    let mut out = Vec::with_capacity(rows.len());
    let mut buf = vec![0.0; cols.len()];
    for a in 0..rows.len() {
        for b in 0..cols.len() {
            buf[b] = x[(a, b)];
        }
        out.push(fit.distances(&buf)?.into_iter().fold(f64::INFINITY, f64::min));
    }
    Ok(out)
}

fn finite_values(m: &DMatrix<f64>) -> Vec<f64> {
    m.iter().copied().filter(|v| v.is_finite()).collect()
}

/// Initial mask: cells whose univariate distance exceeds the global
/// (1 − α₁) quantile are flagged, then cells whose summed bivariate
/// distances exceed the (1 − α₁/(1 − α₂)) quantile. Columns with more than
/// `observed − h` flags keep only their most extreme flags, ranked by
/// distance relative to the threshold that flagged them. Missing cells are 0.
pub fn init_mask(data: &DataSet, g: usize, h: usize, cfg: &InitConfig, stream: SeedStream) -> Result<CellMask> {
    let (n, p) = (data.n(), data.p());

    // Univariate pass.
    let mut f1 = DMatrix::from_element(n, p, f64::NAN);
    for j in 0..p {
        let rows: Vec<usize> = (0..n).filter(|&i| data.is_observed(i, j)).collect();
        let d = min_distances(data, &rows, &[j], g, cfg, stream.child(j as u64))?;
        for (a, &i) in rows.iter().enumerate() {
            f1[(i, j)] = d[a];
        }
    }
    let qq1 = quantile_linear(&finite_values(&f1), 1.0 - cfg.alpha1);
    let w1 = DMatrix::from_fn(n, p, |i, j| !(f1[(i, j)] > qq1));

    // Bivariate pass on cells the univariate pass kept.
    let mut ff2 = DMatrix::from_element(n, p, f64::NAN);
    let mut qq2 = f64::INFINITY;
    if p > 1 {
        let mut sums = DMatrix::zeros(n, p);
        let mut pair = 0u64;
        for j1 in 0..p {
            for j2 in j1 + 1..p {
                let rows: Vec<usize> = (0..n)
                    .filter(|&i| data.is_observed(i, j1) && data.is_observed(i, j2) && w1[(i, j1)] && w1[(i, j2)])
                    .collect();
                let d = min_distances(data, &rows, &[j1, j2], g, cfg, stream.child(p as u64 + pair))?;
                pair += 1;
                for (a, &i) in rows.iter().enumerate() {
                    sums[(i, j1)] += d[a];
                    sums[(i, j2)] += d[a];
                }
            }
        }
        for i in 0..n {
            for j in 0..p {
                if data.is_observed(i, j) && w1[(i, j)] {
                    ff2[(i, j)] = sums[(i, j)];
                }
            }
        }
        let values = finite_values(&ff2);
        if !values.is_empty() {
            qq2 = quantile_linear(&values, 1.0 - cfg.alpha1 / (1.0 - cfg.alpha2));
        }
    }

    let mut mask = CellMask::new(DMatrix::from_fn(n, p, |i, j| data.is_observed(i, j) && w1[(i, j)] && !(ff2[(i, j)] > qq2)));

    // Keep every column feasible: at least h reliable cells.
    for j in 0..p {
        let observed = data.observed_in_column(j);
        let allowed = observed.saturating_sub(h);
        let mut flagged: Vec<(usize, f64)> = (0..n)
            .filter(|&i| data.is_observed(i, j) && !mask.get(i, j))
            .map(|i| {
                let score = if !w1[(i, j)] { f1[(i, j)] / qq1 } else { ff2[(i, j)] / qq2 };
                (i, score)
            })
            .collect();
        if flagged.len() > allowed {
            flagged.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for &(i, _) in &flagged[allowed..] {
                mask.set(i, j, true);
            }
        }
    }
    Ok(mask)
}
