//! Cellwise contamination mechanisms and MCAR missingness.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::Rng as _;

use crate::data::MixtureParams;
use crate::error::{Error, Result};
use crate::gauss::{mahalanobis, FactoredGaussian};
use crate::rng::Rng;
use crate::stats::{chi2_quantile, count_for_rate};

/// Resampling budget per contaminated row for the ellipsoid condition.
pub const ELLIPSOID_BUDGET: usize = 10_000;

/// Replaces ⌈rate·n·p⌉ distinct cells by Uniform(lo, hi) draws. With
/// `outside_ellipsoids`, the replacements of each affected row are redrawn
/// jointly until the row lies outside the 99% ellipsoid of every component.
pub fn contaminate_random(
    clean: &DMatrix<f64>,
    params: &MixtureParams,
    rate: f64,
    lo: f64,
    hi: f64,
    outside_ellipsoids: bool,
    rng: &mut Rng,
) -> Result<(DMatrix<f64>, DMatrix<bool>)> {
    let (n, p) = clean.shape();
    let count = count_for_rate(rate, n * p);
    if count > n * p {
        return Err(Error::NotEnoughCells { requested: count, available: n * p });
    }
    let mut by_row: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for cell in sample(rng, n * p, count).into_vec() {
        by_row.entry(cell / p).or_default().push(cell % p);
    }
    let comps: Vec<FactoredGaussian> =
        (0..params.g()).map(|k| FactoredGaussian::new(&params.means[k], &params.covariances[k])).collect::<Result<_>>()?;
    let cutoff = chi2_quantile(p as f64, 0.99);
    let mut values = clean.clone();
    let mut mask = DMatrix::from_element(n, p, false);
    let mut row = vec![0.0; p];
    for (i, mut cols) in by_row {
        cols.sort_unstable();
        for j in 0..p {
            row[j] = clean[(i, j)];
        }
        let mut accepted = false;
        for _ in 0..ELLIPSOID_BUDGET {
            for &j in &cols {
                row[j] = rng.random_range(lo..hi);
            }
            if !outside_ellipsoids || comps.iter().all(|c| c.sq_mahalanobis(&row) > cutoff) {
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::RejectionBudgetExceeded(format!("row {i} stays inside a 99% ellipsoid")));
        }
        for &j in &cols {
            values[(i, j)] = row[j];
            mask[(i, j)] = true;
        }
    }
    Ok((values, mask))
}

/// Structurally outlying values for the variable set `k_set` of the first
/// component: μ_1[K] − γ√k ν / MD(ν; 0, Σ_1[K]), with ν the unit leading
/// eigenvector of Σ_1[K], signed so its first nonzero entry is positive.
pub fn structural_cells(params: &MixtureParams, k_set: &[usize], gamma: f64) -> Result<DVector<f64>> {
    let k = k_set.len();
    let sigma = DMatrix::from_fn(k, k, |a, b| params.covariances[0][(k_set[a], k_set[b])]);
    let eig = SymmetricEigen::new(sigma.clone());
    let top = eig.eigenvalues.imax();
    let mut nu: DVector<f64> = eig.eigenvectors.column(top).into_owned();
    nu /= nu.norm();
    if let Some(first) = nu.iter().find(|v| **v != 0.0) {
        if *first < 0.0 {
            nu.neg_mut();
        }
    }
    let md = mahalanobis(nu.as_slice(), &DVector::zeros(k), &sigma)?;
    let mu = DVector::from_fn(k, |a, _| params.means[0][k_set[a]]);
    Ok(mu - nu * (gamma * (k as f64).sqrt() / md))
}

/// For every column, ⌈rate·n₁⌉ rows of the first component (n₁ of them)
/// are drawn; each affected row gets structural values on the set of
/// columns that drew it.
pub fn contaminate_structural(
    clean: &DMatrix<f64>,
    labels: &[usize],
    params: &MixtureParams,
    rate: f64,
    gamma: f64,
    rng: &mut Rng,
) -> Result<(DMatrix<f64>, DMatrix<bool>)> {
    let (n, p) = clean.shape();
    let first: Vec<usize> = (0..n).filter(|&i| labels[i] == 0).collect();
    let per_column = count_for_rate(rate, first.len());
    let mut mask = DMatrix::from_element(n, p, false);
    for j in 0..p {
        for a in sample(rng, first.len(), per_column).into_vec() {
            mask[(first[a], j)] = true;
        }
    }
    let mut values = clean.clone();
    for i in 0..n {
        let k_set: Vec<usize> = (0..p).filter(|&j| mask[(i, j)]).collect();
        if k_set.is_empty() {
            continue;
        }
        let x = structural_cells(params, &k_set, gamma)?;
        for (a, &j) in k_set.iter().enumerate() {
            values[(i, j)] = x[a];
        }
    }
    Ok((values, mask))
}

/// MCAR removal of ⌈rate·n·p⌉ cells among the uncontaminated ones.
pub fn remove_missing(outlier_mask: &DMatrix<bool>, rate: f64, rng: &mut Rng) -> Result<DMatrix<bool>> {
    let (n, p) = outlier_mask.shape();
    let count = count_for_rate(rate, n * p);
    let eligible: Vec<usize> = (0..n * p).filter(|&c| !outlier_mask[(c / p, c % p)]).collect();
    if count > eligible.len() {
        return Err(Error::NotEnoughCells { requested: count, available: eligible.len() });
    }
    let mut missing = DMatrix::from_element(n, p, false);
    for a in sample(rng, eligible.len(), count).into_vec() {
        let c = eligible[a];
        missing[(c / p, c % p)] = true;
    }
    Ok(missing)
}
