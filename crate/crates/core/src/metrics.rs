//! Label alignment and evaluation scores for fitted mixtures.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{CellMask, FitResult, MixtureParams, Posterior};
use crate::error::{Error, Result};
use crate::gauss::FactoredGaussian;
use crate::simlab::GroundTruth;

/// Largest G for which alignment enumerates all permutations.
pub const MAX_ALIGN_G: usize = 8;

/// All permutations of 0..g in lexicographic order.
pub fn permutations(g: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..g).collect();
    loop {
        out.push(current.clone());
        // Next lexicographic permutation.
        let Some(i) = (0..g.saturating_sub(1)).rev().find(|&i| current[i] < current[i + 1]) else {
            return out;
        };
        let j = (i + 1..g).rev().find(|&j| current[j] > current[i]).expect("successor exists");
        current.swap(i, j);
        current[i + 1..].reverse();
    }
}

/// Per (true component, fitted component) sums of ln π̂_k + ln φ(x_i; μ̂_k, Σ̂_k)
/// over the rows truly drawn from the component.
pub fn alignment_scores(fitted: &MixtureParams, clean: &DMatrix<f64>, labels: &[usize]) -> Result<DMatrix<f64>> {
    let g = fitted.g();
    if labels.len() != clean.nrows() {
        return Err(Error::LengthMismatch { left: labels.len(), right: clean.nrows() });
    }
    let comps: Vec<FactoredGaussian> =
        (0..g).map(|k| FactoredGaussian::new(&fitted.means[k], &fitted.covariances[k])).collect::<Result<_>>()?;
    let mut scores = DMatrix::zeros(g, g);
    let mut row = vec![0.0; clean.ncols()];
    for (i, &truth) in labels.iter().enumerate() {
        if truth >= g {
            return Err(Error::LengthMismatch { left: truth + 1, right: g });
        }
        for j in 0..row.len() {
            row[j] = clean[(i, j)];
        }
        for k in 0..g {
            scores[(truth, k)] += fitted.weights[k].ln() + comps[k].log_density(&row);
        }
    }
    Ok(scores)
}

/// Permutation σ (true component g ↦ fitted component σ[g]) maximizing the
/// complete-data log-likelihood of the clean sample. Ties keep the
/// lexicographically first permutation.
pub fn align_labels(fitted: &MixtureParams, truth: &GroundTruth) -> Result<Vec<usize>> {
    align_to(fitted, &truth.clean_values, &truth.labels, truth.params.g())
}

pub fn align_to(fitted: &MixtureParams, clean: &DMatrix<f64>, labels: &[usize], g_true: usize) -> Result<Vec<usize>> {
    let g = fitted.g();
    if g != g_true {
        return Err(Error::LengthMismatch { left: g, right: g_true });
    }
    if g > MAX_ALIGN_G {
        return Err(Error::GTooLarge(g));
    }
    let scores = alignment_scores(fitted, clean, labels)?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(g) {
        let total: f64 = (0..g).map(|k| scores[(k, perm[k])]).sum();
        if best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, perm));
        }
    }
    Ok(best.expect("at least one permutation").1)
}

/// Fraction of rows whose fitted label differs from the aligned truth.
pub fn misclassification_rate(assigned: &[usize], truth: &[usize], permutation: &[usize]) -> Result<f64> {
    if assigned.len() != truth.len() {
        return Err(Error::LengthMismatch { left: assigned.len(), right: truth.len() });
    }
    let wrong = assigned.iter().zip(truth).filter(|(a, t)| **a != permutation[**t]).count();
    Ok(wrong as f64 / truth.len().max(1) as f64)
}

fn pairs(m: f64) -> f64 {
    m * (m - 1.0) / 2.0
}

/// Hubert–Arabie adjusted Rand index. Degenerate cases where the expected
/// and maximal index coincide return 1.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let index: f64 = table.iter().map(|&c| pairs(c as f64)).sum();
    let sum_a: f64 = (0..ka).map(|x| pairs(table[x * kb..(x + 1) * kb].iter().sum::<u64>() as f64)).sum();
    let sum_b: f64 = (0..kb).map(|y| pairs((0..ka).map(|x| table[x * kb + y]).sum::<u64>() as f64)).sum();
    let expected = sum_a * sum_b / pairs(a.len() as f64);
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterErrors {
    pub mse_means: Vec<f64>,
    pub kl_covs: Vec<f64>,
    pub mse_priors: f64,
    pub rmse_posterior: f64,
}

/// Covariance-only Gaussian KL divergence of N(0, fitted) from N(0, truth).
pub fn covariance_kl(truth: &DMatrix<f64>, fitted: &DMatrix<f64>, component: usize) -> Result<f64> {
    let p = truth.nrows();
    let chol_t = truth.clone().cholesky().ok_or(Error::SingularTruthCovariance(component))?;
    let chol_f = fitted.clone().cholesky().ok_or(Error::SingularSubmatrix)?;
    let trace = chol_t.solve(fitted).trace();
    let ln_det = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let ln_det_ratio = ln_det(&chol_f.l()) - ln_det(&chol_t.l());
    Ok((0.5 * (trace - p as f64 - ln_det_ratio)).max(0.0))
}

pub fn parameter_errors(
    fitted: &MixtureParams,
    posterior: &Posterior,
    truth_params: &MixtureParams,
    truth_labels: &[usize],
    permutation: &[usize],
) -> Result<ParameterErrors> {
    let (g, p) = (truth_params.g(), truth_params.p());
    if fitted.g() != g || permutation.len() != g {
        return Err(Error::LengthMismatch { left: fitted.g(), right: g });
    }
    if posterior.n() != truth_labels.len() {
        return Err(Error::LengthMismatch { left: posterior.n(), right: truth_labels.len() });
    }
    let mut mse_means = Vec::with_capacity(g);
    let mut kl_covs = Vec::with_capacity(g);
    for k in 0..g {
        let s = permutation[k];
        mse_means.push((&fitted.means[s] - &truth_params.means[k]).norm_squared() / p as f64);
        kl_covs.push(covariance_kl(&truth_params.covariances[k], &fitted.covariances[s], k)?);
    }
    let mse_priors = (0..g).map(|k| (fitted.weights[permutation[k]] - truth_params.weights[k]).powi(2)).sum::<f64>() / g as f64;
    let n = truth_labels.len();
    let mut sq = 0.0;
    for (i, &t) in truth_labels.iter().enumerate() {
        for k in 0..g {
            let target = if t == k { 1.0 } else { 0.0 };
            sq += (posterior.z[(i, permutation[k])] - target).powi(2);
        }
    }
    let rmse_posterior = (sq / (n * g).max(1) as f64).sqrt();
    Ok(ParameterErrors { mse_means, kl_covs, mse_priors, rmse_posterior })
}

/// Percentages of true and false positives among observed cells. The true
/// positive rate is absent when no observed cell is contaminated.
pub fn mask_scores(mask: &CellMask, outliers: &DMatrix<bool>, missing: &DMatrix<bool>) -> Result<(Option<f64>, f64)> {
    if mask.shape() != outliers.shape() {
        return Err(Error::ShapeMismatch { left: mask.shape(), right: outliers.shape() });
    }
    if missing.shape() != outliers.shape() {
        return Err(Error::ShapeMismatch { left: missing.shape(), right: outliers.shape() });
    }
    let (n, p) = mask.shape();
    let (mut contaminated, mut clean, mut tp, mut fp) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..n {
        for j in 0..p {
            if missing[(i, j)] {
                continue;
            }
            let flagged = !mask.get(i, j);
            if outliers[(i, j)] {
                contaminated += 1;
                tp += usize::from(flagged);
            } else {
                clean += 1;
                fp += usize::from(flagged);
            }
        }
    }
    let tp_pct = (contaminated > 0).then(|| 100.0 * tp as f64 / contaminated as f64);
    let fp_pct = if clean > 0 { 100.0 * fp as f64 / clean as f64 } else { 0.0 };
    Ok((tp_pct, fp_pct))
}

/// MAE and RMSE of `imputed` against `clean` over the cells in `scope`, or
/// over all cells when `scope` is `None`.
pub fn imputation_errors(imputed: &DMatrix<f64>, clean: &DMatrix<f64>, scope: Option<&DMatrix<bool>>) -> Result<(f64, f64)> {
    if imputed.shape() != clean.shape() {
        return Err(Error::ShapeMismatch { left: imputed.shape(), right: clean.shape() });
    }
    if let Some(s) = scope {
        if s.shape() != clean.shape() {
            return Err(Error::ShapeMismatch { left: s.shape(), right: clean.shape() });
        }
    }
    let (mut abs, mut sq, mut count) = (0.0, 0.0, 0usize);
    for (idx, (a, b)) in imputed.iter().zip(clean.iter()).enumerate() {
        if scope.is_some_and(|s| !s[idx]) {
            continue;
        }
        let d = a - b;
        abs += d.abs();
        sq += d * d;
        count += 1;
    }
    if count == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((abs / count as f64, (sq / count as f64).sqrt()))
}

/// Mask of a rowwise method that trims whole rows: every cell of a trimmed
/// row is flagged, so such methods can be scored with [`mask_scores`].
pub fn rowwise_mask(trimmed: &[bool], p: usize, missing: &DMatrix<bool>) -> CellMask {
    CellMask::new(DMatrix::from_fn(trimmed.len(), p, |i, j| !trimmed[i] && !missing[(i, j)]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mr: f64,
    pub ari: f64,
    pub rmse_posterior: f64,
    pub mse_priors: f64,
    pub mse_means: Vec<f64>,
    pub kl_covs: Vec<f64>,
    pub tp_pct: Option<f64>,
    pub fp_pct: f64,
    pub mae_imputation: f64,
    pub rmse_imputation: f64,
    /// σ[g] is the fitted component matched to true component g.
    pub permutation: Vec<usize>,
}

/// Scores a fit against the ground truth it was generated from.
pub fn evaluate(fit: &FitResult, truth: &GroundTruth) -> Result<EvalReport> {
    let permutation = align_labels(&fit.params, truth)?;
    let assigned = fit.labels();
    let mr = misclassification_rate(&assigned, &truth.labels, &permutation)?;
    let ari = adjusted_rand_index(&assigned, &truth.labels)?;
    let errs = parameter_errors(&fit.params, &fit.posterior, &truth.params, &truth.labels, &permutation)?;
    let (tp_pct, fp_pct) = mask_scores(&fit.mask, &truth.outlier_mask, &truth.missing_mask)?;
    let (mae_imputation, rmse_imputation) = imputation_errors(&fit.imputed, &truth.clean_values, None)?;
    Ok(EvalReport {
        mr,
        ari,
        rmse_posterior: errs.rmse_posterior,
        mse_priors: errs.mse_priors,
        mse_means: errs.mse_means,
        kl_covs: errs.kl_covs,
        tp_pct,
        fp_pct,
        mae_imputation,
        rmse_imputation,
        permutation,
    })
}
