//! Small classification-EM trimmed clustering used by the initialization.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;

use crate::constraints::constrain_covariances;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::gauss::FactoredGaussian;
use crate::stats::count_for_rate;

/// Fitted trimmed clustering.
#[derive(Debug, Clone)]
pub struct TclustFit {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    /// Hard assignment of every row (trimmed rows included).
    pub labels: Vec<usize>,
    pub trimmed: Vec<bool>,
    /// Trimmed classification log-likelihood.
    pub objective: f64,
}

impl TclustFit {
    /// Mahalanobis distance of `x` to every component.
    pub fn distances(&self, x: &[f64]) -> Result<Vec<f64>> {
        (0..self.means.len()).map(|k| crate::gauss::mahalanobis(x, &self.means[k], &self.covariances[k])).collect()
    }
}

struct Factor {
    log_weight: f64,
    gauss: FactoredGaussian,
}

impl Factor {
    fn new(weight: f64, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        Ok(Self { log_weight: weight.ln(), gauss: FactoredGaussian::new(mean, cov)? })
    }

    fn log_term(&self, x: &DVector<f64>) -> f64 {
        self.log_weight + self.gauss.log_density(x.as_slice())
    }
}

fn data_scale(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let d = x.ncols();
    let mut v = DVector::zeros(d);
    for j in 0..d {
        let col = x.column(j);
        let m = col.mean();
        v[j] = (col.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n).max(1e-8);
    }
    DMatrix::from_diagonal(&v)
}

fn weighted_cov(rows: &[DVector<f64>], mean: &DVector<f64>) -> DMatrix<f64> {
    let d = mean.len();
    let mut s = DMatrix::zeros(d, d);
    for r in rows {
        let e = r - mean;
        s += &e * e.transpose();
    }
    s / rows.len() as f64
}

/// Constrained covariances, falling back to the overall scale when every
/// cluster scatter is degenerate.
fn constrained(covs: &[DMatrix<f64>], sizes: &[f64], c: f64, scale: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    let all_zero = covs.iter().all(|s| s.amax() <= 0.0);
    if all_zero {
        return Ok(vec![scale.clone(); covs.len()]);
    }
    let out = constrain_covariances(covs, sizes, c)?;
    Ok(out.into_iter().map(|s| if s.clone().cholesky().is_some() { s } else { scale.clone() }).collect())
}

struct Start {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
}

fn concentrate(rows: &[DVector<f64>], start: Start, n_trim: usize, c: f64, iters: usize, scale: &DMatrix<f64>) -> Result<TclustFit> {
    let (n, g) = (rows.len(), start.means.len());
    let Start { mut weights, mut means, mut covs } = start;
    let mut labels = vec![0; n];
    let mut trimmed = vec![false; n];
    let mut best = vec![0.0; n];
    let mut prev: Option<(Vec<usize>, Vec<bool>)> = None;
    for it in 0..=iters {
        let factors: Vec<Factor> = (0..g).map(|k| Factor::new(weights[k], &means[k], &covs[k])).collect::<Result<_>>()?;
        for (i, x) in rows.iter().enumerate() {
            let mut arg = 0;
            let mut top = f64::NEG_INFINITY;
            for (k, f) in factors.iter().enumerate() {
                let v = f.log_term(x);
                if v > top {
                    top = v;
                    arg = k;
                }
            }
            labels[i] = arg;
            best[i] = top;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| best[a].total_cmp(&best[b]).then(b.cmp(&a)));
        trimmed.iter_mut().for_each(|t| *t = false);
        for &i in order.iter().take(n_trim) {
            trimmed[i] = true;
        }
        let state = (labels.clone(), trimmed.clone());
        if it == iters || prev.as_ref() == Some(&state) {
            break;
        }
        prev = Some(state);

        // Refit from the untrimmed hard clusters.
        let mut sizes = vec![0.0; g];
        let mut new_covs = Vec::with_capacity(g);
        for k in 0..g {
            let members: Vec<DVector<f64>> = (0..n).filter(|&i| !trimmed[i] && labels[i] == k).map(|i| rows[i].clone()).collect();
            if members.is_empty() {
                // Reseed an empty cluster at the worst-fitting kept row.
                let far = order.iter().copied().find(|&i| !trimmed[i]).unwrap_or(0);
                means[k] = rows[far].clone();
                sizes[k] = 1.0;
                new_covs.push(covs[k].clone());
                continue;
            }
            let m = members.iter().fold(DVector::zeros(means[k].len()), |acc, r| acc + r) / members.len() as f64;
            new_covs.push(weighted_cov(&members, &m));
            means[k] = m;
            sizes[k] = members.len() as f64;
        }
        covs = constrained(&new_covs, &sizes, c, scale)?;
        let total: f64 = sizes.iter().sum();
        weights = sizes.iter().map(|s| s / total).collect();
    }
    let objective = (0..n).filter(|&i| !trimmed[i]).map(|i| best[i]).sum();
    Ok(TclustFit { weights, means, covariances: covs, labels, trimmed, objective })
}

/// Trimmed classification EM on fully observed rows.
///
/// Each random start places every component on `d + 1` distinct rows; each
/// iteration assigns rows to their best component, trims the ⌈α·n⌉ rows with
/// the lowest best log-density and refits constrained parameters. The start
/// with the highest trimmed classification likelihood wins.
pub fn mini_tclust(x: &DMatrix<f64>, g: usize, alpha: f64, c: f64, starts: usize, iters: usize, rng: &mut Rng) -> Result<TclustFit> {
    let (n, d) = x.shape();
    let needed = g * (d + 1);
    if n < needed || g == 0 {
        return Err(Error::TooFewRows { rows: n, needed });
    }
    let rows: Vec<DVector<f64>> = (0..n).map(|i| x.row(i).transpose()).collect();
    let n_trim = count_for_rate(alpha, n).min(n - g);
    let scale = data_scale(x);
    let mut best: Option<TclustFit> = None;
    for _ in 0..starts.max(1) {
        let picks = sample(rng, n, needed).into_vec();
        let mut means = Vec::with_capacity(g);
        let mut covs = Vec::with_capacity(g);
        for k in 0..g {
            let group: Vec<DVector<f64>> = picks[k * (d + 1)..(k + 1) * (d + 1)].iter().map(|&i| rows[i].clone()).collect();
            let m = group.iter().fold(DVector::zeros(d), |acc, r| acc + r) / group.len() as f64;
            covs.push(weighted_cov(&group, &m));
            means.push(m);
        }
        let covs = constrained(&covs, &vec![1.0; g], c, &scale)?;
        let start = Start { weights: vec![1.0 / g as f64; g], means, covs };
        let fit = concentrate(&rows, start, n_trim, c, iters, &scale)?;
        if best.as_ref().is_none_or(|b| fit.objective > b.objective) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one start"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng as _, SeedableRng};
    use rand_distr::StandardNormal;

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    #[test]
    fn separated_clusters_recovered() {
        let mut r = rng(1);
        let x = DMatrix::from_fn(100, 1, |i, _| {
            let e: f64 = r.sample(StandardNormal);
            if i < 50 { e } else { 10.0 + e }
        });
        let fit = mini_tclust(&x, 2, 0.0, 50.0, 8, 20, &mut r).unwrap();
        let m0 = x.rows(0, 50).mean();
        let m1 = x.rows(50, 50).mean();
        let mut got: Vec<f64> = fit.means.iter().map(|m| m[0]).collect();
        got.sort_by(f64::total_cmp);
        assert!((got[0] - m0).abs() < 0.2 && (got[1] - m1).abs() < 0.2, "{got:?}");
    }

    #[test]
    fn gross_outliers_are_trimmed() {
        let mut r = rng(2);
        let x = DMatrix::from_fn(100, 2, |i, _| {
            let e: f64 = r.sample(StandardNormal);
            match i {
                0..5 => 50.0,
                5..10 => -50.0,
                _ if i % 2 == 0 => e,
                _ => 8.0 + e,
            }
        });
        let x = DMatrix::from_fn(100, 2, |i, j| if i < 10 { x[(i, j)] + j as f64 * 0.1 * i as f64 } else { x[(i, j)] });
        let fit = mini_tclust(&x, 2, 0.1, 50.0, 8, 20, &mut r).unwrap();
        for i in 0..100 {
            assert_eq!(fit.trimmed[i], i < 10, "row {i}");
        }
    }

    #[test]
    fn single_component_gives_sample_moments() {
        let mut r = rng(3);
        let x = DMatrix::from_fn(40, 2, |_, _| r.sample::<f64, _>(StandardNormal));
        let fit = mini_tclust(&x, 1, 0.0, 1e6, 2, 5, &mut r).unwrap();
        let mean = x.row_mean().transpose();
        let rows: Vec<DVector<f64>> = (0..40).map(|i| x.row(i).transpose()).collect();
        let cov = weighted_cov(&rows, &mean);
        assert!((&fit.means[0] - mean).amax() < 1e-12);
        assert!((&fit.covariances[0] - cov).amax() < 1e-12);
        assert_abs_diff_eq!(fit.weights[0], 1.0);
    }

    #[test]
    fn too_few_rows() {
        let x = DMatrix::from_element(5, 2, 1.0);
        assert!(matches!(mini_tclust(&x, 2, 0.0, 10.0, 1, 1, &mut rng(0)), Err(Error::TooFewRows { rows: 5, needed: 6 })));
    }

    #[test]
    fn tied_values_do_not_break() {
        let x = DMatrix::from_fn(30, 1, |i, _| (i % 3) as f64);
        let fit = mini_tclust(&x, 2, 0.1, 50.0, 4, 10, &mut rng(4)).unwrap();
        assert!(fit.covariances.iter().all(|s| s[(0, 0)] > 0.0));
    }
}
