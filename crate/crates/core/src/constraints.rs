//! Eigenvalue-ratio constraint on the set of component covariances.
//!
//! All eigenvalues of all components are clipped to a common band
//! `[m, c·m]`, with `m` chosen to minimize the weighted deviance
//!
//! ```text
//! f(m) = Σ_g (n_g / n) Σ_j [ ln λ*_jg + λ_jg / λ*_jg ],   λ*_jg = clip(λ_jg, m, c·m)
//! ```
//!
//! which is the negative profile of the expected complete-data
//! log-likelihood, so the truncated matrices are the constrained maximizers.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::data::{MixtureParams, Posterior};
use crate::error::{Error, Result};

/// Relative slack below which a spectrum is treated as already feasible, so
/// that re-applying the constraint to its own output is a no-op.
const FEASIBLE_SLACK: f64 = 1e-10;

/// Spectral decomposition of one component covariance and its weight.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal columns, aligned with `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    /// Expected component size Σ_i z_ig.
    pub weight: f64,
}

impl EigenSystem {
    pub fn from_covariance(sigma: &DMatrix<f64>, weight: f64) -> Self {
        let sym = (sigma + sigma.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let eigenvectors = DMatrix::from_fn(sigma.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
        Self { eigenvalues, eigenvectors, weight }
    }

    pub fn recompose(&self, eigenvalues: &[f64]) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        let p = v.nrows();
        let mut out = DMatrix::zeros(p, p);
        for (k, &l) in eigenvalues.iter().enumerate() {
            let col = v.column(k);
            for a in 0..p {
                let va = col[a] * l;
                for b in 0..=a {
                    out[(a, b)] += va * col[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                out[(b, a)] = out[(a, b)];
            }
        }
        out
    }
}

fn total_weight(systems: &[EigenSystem]) -> f64 {
    let mut w: Vec<f64> = systems.iter().map(|s| s.weight).collect();
    crate::stats::sorted_sum(&mut w)
}

fn floored(systems: &[EigenSystem]) -> Vec<Vec<f64>> {
    let top = systems.iter().flat_map(|s| s.eigenvalues.iter().copied()).fold(0.0_f64, f64::max);
    let floor = if top > 0.0 { 1e-12 * top } else { f64::MIN_POSITIVE };
    systems.iter().map(|s| s.eigenvalues.iter().map(|&l| l.max(floor)).collect()).collect()
}

/// Weighted deviance f(m) for threshold `m`.
pub fn truncation_deviance(systems: &[EigenSystem], c: f64, m: f64) -> f64 {
    let total = total_weight(systems);
    let lambdas = floored(systems);
    let mut terms: Vec<f64> = Vec::new();
    for (s, ls) in systems.iter().zip(&lambdas) {
        if s.weight <= 0.0 {
            continue;
        }
        let w = s.weight / total;
        for &l in ls {
            let t = l.clamp(m, c * m);
            terms.push(w * (t.ln() + l / t));
        }
    }
    crate::stats::sorted_sum(&mut terms)
}

/// Optimal lower threshold m* of the clipping band, or `None` when the
/// spectra already satisfy the ratio bound.
pub fn optimal_threshold(systems: &[EigenSystem], c: f64) -> Result<Option<f64>> {
    let total = total_weight(systems);
    if !(total > 0.0) {
        return Err(Error::AllWeightsZero);
    }
    let lambdas = floored(systems);
    let all = lambdas.iter().flatten().copied();
    let (lo, hi) = all.fold((f64::INFINITY, 0.0_f64), |(lo, hi), l| (lo.min(l), hi.max(l)));
    if hi <= c * lo * (1.0 + FEASIBLE_SLACK) {
        return Ok(None);
    }

    // Weighted eigenvalues of the components that enter the deviance.
    let weighted: Vec<(f64, f64)> = systems
        .iter()
        .zip(&lambdas)
        .filter(|(s, _)| s.weight > 0.0)
        .flat_map(|(s, ls)| ls.iter().map(move |&l| (s.weight / total, l)))
        .collect();
    let mut knots: Vec<f64> = weighted.iter().flat_map(|&(_, l)| [l, l / c]).collect();
    knots.sort_unstable_by(f64::total_cmp);
    knots.dedup();

    let mut candidates: Vec<f64> = knots.clone();
    for win in knots.windows(2) {
        let (a, b) = (win[0], win[1]);
        let mid = 0.5 * (a + b);
        // Clip pattern is constant on (a, b); stationary point of f there.
        let mut num = Vec::new();
        let mut den = Vec::new();
        for &(w, l) in &weighted {
            if l < mid {
                num.push(w * l);
                den.push(w);
            } else if l > c * mid {
                num.push(w * l / c);
                den.push(w);
            }
        }
        let den = crate::stats::sorted_sum(&mut den);
        if den > 0.0 {
            let m = crate::stats::sorted_sum(&mut num) / den;
            candidates.push(m.clamp(a, b));
        }
    }

    let mut best = (f64::INFINITY, f64::NAN);
    for m in candidates {
        let f = truncation_deviance(systems, c, m);
        if f < best.0 || (f == best.0 && m < best.1) {
            best = (f, m);
        }
    }
    Ok(Some(best.1))
}

/// Truncated eigenvalue sets, one per system, satisfying max/min ≤ c.
pub fn truncate_eigenvalues(systems: &[EigenSystem], c: f64) -> Result<Vec<Vec<f64>>> {
    match optimal_threshold(systems, c)? {
        None => Ok(floored(systems)),
        Some(m) => Ok(floored(systems)
            .into_iter()
            .map(|ls| ls.into_iter().map(|l| l.clamp(m, c * m)).collect())
            .collect()),
    }
}

/// Constrains a set of covariances given component weights (expected or
/// hard counts). Matrices that already satisfy the bound come back untouched.
pub fn constrain_covariances(covariances: &[DMatrix<f64>], weights: &[f64], c: f64) -> Result<Vec<DMatrix<f64>>> {
    let systems: Vec<EigenSystem> = covariances
        .iter()
        .zip(weights)
        .map(|(s, &w)| EigenSystem::from_covariance(s, w))
        .collect();
    match optimal_threshold(&systems, c)? {
        None if systems.iter().all(|s| s.eigenvalues.iter().all(|&l| l > 0.0)) => Ok(covariances.to_vec()),
        _ => {
            let truncated = truncate_eigenvalues(&systems, c)?;
            Ok(systems.iter().zip(&truncated).map(|(s, ls)| s.recompose(ls)).collect())
        }
    }
}

/// Applies the eigenvalue-ratio bound to every covariance of `params`,
/// weighting components by their expected sizes under `posterior`.
pub fn apply_constraint(params: &MixtureParams, posterior: &Posterior, c: f64) -> Result<MixtureParams> {
    let weights: Vec<f64> = (0..params.g()).map(|g| posterior.z.column(g).sum()).collect();
    let covariances = constrain_covariances(&params.covariances, &weights, c)?;
    Ok(MixtureParams { weights: params.weights.clone(), means: params.means.clone(), covariances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DVector, DMatrix};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag_system(ls: &[f64], weight: f64) -> EigenSystem {
        EigenSystem::from_covariance(&DMatrix::from_diagonal(&DVector::from_vec(ls.to_vec())), weight)
    }

    /// Independent oracle: a 10⁶-point log-spaced grid over [λ_min/c, λ_max]
    /// followed by golden-section refinement of the best grid cell.
    fn grid_minimize(systems: &[EigenSystem], c: f64) -> f64 {
        let ls: Vec<f64> = systems.iter().flat_map(|s| s.eigenvalues.iter().copied()).collect();
        let lo = ls.iter().copied().fold(f64::INFINITY, f64::min) / c;
        let hi = ls.iter().copied().fold(0.0, f64::max);
        let n = 1_000_000;
        let step = (hi / lo).ln() / (n - 1) as f64;
        let at = |k: usize| lo * (step * k as f64).exp();
        let best_k = (0..n)
            .min_by(|&a, &b| truncation_deviance(systems, c, at(a)).total_cmp(&truncation_deviance(systems, c, at(b))))
            .unwrap();
        let (mut a, mut b) = (at(best_k.saturating_sub(1)), at((best_k + 1).min(n - 1)));
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let x1 = b - phi * (b - a);
            let x2 = a + phi * (b - a);
            if truncation_deviance(systems, c, x1) <= truncation_deviance(systems, c, x2) {
                b = x2;
            } else {
                a = x1;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn feasible_spectrum_unchanged() {
        let out = truncate_eigenvalues(&[diag_system(&[1.0, 2.0], 1.0), diag_system(&[2.0, 1.0], 1.0)], 4.0).unwrap();
        assert_eq!(out, vec![vec![2.0, 1.0], vec![2.0, 1.0]]);
        let out = truncate_eigenvalues(&[diag_system(&[3.5, 3.5], 1.0)], 1.0).unwrap();
        assert_eq!(out, vec![vec![3.5, 3.5]]);
    }

    #[test]
    fn single_component_against_grid() {
        let systems = [diag_system(&[1.0, 100.0], 1.0)];
        let m = optimal_threshold(&systems, 10.0).unwrap().unwrap();
        let m_grid = grid_minimize(&systems, 10.0);
        assert_abs_diff_eq!(m, m_grid, epsilon = 1e-6);
        assert_abs_diff_eq!(m, 5.5, epsilon = 1e-12);
        let out = truncate_eigenvalues(&systems, 10.0).unwrap();
        assert_abs_diff_eq!(out[0][0], (100.0f64).clamp(m_grid, 10.0 * m_grid), epsilon = 1e-5);
        assert_abs_diff_eq!(out[0][1], (1.0f64).clamp(m_grid, 10.0 * m_grid), epsilon = 1e-6);
    }

    #[test]
    fn pooled_components_against_grid() {
        let systems = [diag_system(&[1.0, 2.0], 1.0), diag_system(&[50.0, 60.0], 1.0)];
        let m = optimal_threshold(&systems, 10.0).unwrap().unwrap();
        let m_grid = grid_minimize(&systems, 10.0);
        assert_abs_diff_eq!(m, m_grid, epsilon = 1e-6);
        let out = truncate_eigenvalues(&systems, 10.0).unwrap();
        let all: Vec<f64> = out.iter().flatten().copied().collect();
        let ratio = all.iter().copied().fold(0.0, f64::max) / all.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(ratio <= 10.0 * (1.0 + 1e-12));
    }

    #[test]
    fn near_singular_covariance_repaired() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-9]));
        let out = constrain_covariances(&[sigma], &[1.0], 100.0).unwrap();
        let eig = out[0].clone().symmetric_eigen().eigenvalues;
        assert!(eig.min() > 0.0);
        assert!(eig.max() / eig.min() <= 100.0 * (1.0 + 1e-9));
        assert!(out[0].clone().cholesky().is_some());
    }

    #[test]
    fn indefinite_average_becomes_spd() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let out = constrain_covariances(&[sigma], &[1.0], 50.0).unwrap();
        let eig = out[0].clone().symmetric_eigen().eigenvalues;
        assert!(eig.min() > 0.0 && eig.max() / eig.min() <= 50.0 * (1.0 + 1e-9));
    }

    #[test]
    fn zero_weights_rejected() {
        assert!(matches!(truncate_eigenvalues(&[diag_system(&[1.0, 100.0], 0.0)], 2.0), Err(Error::AllWeightsZero)));
    }

    #[test]
    fn feasible_params_returned_unchanged() {
        let params = MixtureParams::new(
            vec![0.5, 0.5],
            vec![DVector::zeros(2), DVector::from_element(2, 3.0)],
            vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]), DMatrix::identity(2, 2) * 2.0],
        )
        .unwrap();
        let post = Posterior::new(DMatrix::from_element(4, 2, 0.5));
        assert_eq!(apply_constraint(&params, &post, 10.0).unwrap(), params);
    }

    fn random_systems(seed: u64) -> Vec<EigenSystem> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = rng.random_range(1..4);
        (0..g)
            .map(|_| {
                let p = rng.random_range(1..5);
                let ls: Vec<f64> = (0..p).map(|_| 10f64.powf(rng.random_range(-3.0..3.0))).collect();
                diag_system(&ls, rng.random_range(0.1..10.0))
            })
            .collect()
    }

    proptest! {
        #[test]
        fn optimal_against_random_probes(seed in any::<u64>(), c in 1.0f64..200.0) {
            let systems = random_systems(seed);
            let out = truncate_eigenvalues(&systems, c).unwrap();
            let all: Vec<f64> = out.iter().flatten().copied().collect();
            let hi = all.iter().copied().fold(0.0, f64::max);
            let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!(hi / lo <= c * (1.0 + 1e-9));
            if let Some(m) = optimal_threshold(&systems, c).unwrap() {
                let f_star = truncation_deviance(&systems, c, m);
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
                let ls: Vec<f64> = systems.iter().flat_map(|s| s.eigenvalues.clone()).collect();
                let (a, b) = (ls.iter().copied().fold(f64::INFINITY, f64::min) / c / 2.0, 2.0 * ls.iter().copied().fold(0.0, f64::max));
                for _ in 0..1000 {
                    let probe = a * (b / a).powf(rng.random::<f64>());
                    prop_assert!(f_star <= truncation_deviance(&systems, c, probe) + 1e-12);
                }
            }
        }

        #[test]
        fn constraint_is_idempotent(seed in any::<u64>(), c in 1.0f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = rng.random_range(1..5);
            let covs: Vec<DMatrix<f64>> = (0..2).map(|_| {
                let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-2.0..2.0));
                &a * a.transpose() + DMatrix::identity(p, p) * 1e-3
            }).collect();
            let once = constrain_covariances(&covs, &[1.0, 2.0], c).unwrap();
            let twice = constrain_covariances(&once, &[1.0, 2.0], c).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).amax() <= 1e-12 * a.amax().max(1.0));
            }
        }

        #[test]
        fn relaxing_c_never_increases_deviance(seed in any::<u64>(), c in 1.0f64..50.0, extra in 0.0f64..50.0) {
            let systems = random_systems(seed);
            let f_at = |c: f64| match optimal_threshold(&systems, c).unwrap() {
                Some(m) => truncation_deviance(&systems, c, m),
                None => {
                    let lo = systems.iter().flat_map(|s| s.eigenvalues.iter().copied()).fold(f64::INFINITY, f64::min);
                    truncation_deviance(&systems, c, lo)
                }
            };
            prop_assert!(f_at(c + extra) <= f_at(c) + 1e-12);
        }
    }
}
