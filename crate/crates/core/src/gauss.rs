//! Masked multivariate-normal kernels: log-densities of sub-vectors,
//! conditional moments of one block given another, Mahalanobis distances.
//!
//! Every kernel factors the restricted covariance block with a Cholesky
//! decomposition gathered into a reusable [`Workspace`], so the hot loops of
//! the C- and E-steps allocate nothing per call.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stats::LN_2PI;

/// Largest tolerated ratio between Cholesky pivots (squared), used as a
/// cheap lower bound on the condition number of the restricted block.
pub const MAX_CONDITION: f64 = 1e12;

/// Conditional mean and covariance of a target block given reliable cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    pub cond_mean: DVector<f64>,
    pub cond_cov: DMatrix<f64>,
}

/// Scratch buffers for the restricted Cholesky factorizations.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    idx: Vec<usize>,
    /// Row-major lower-triangular factor.
    l: Vec<f64>,
    /// Whitened residual L⁻¹(x − μ).
    y: Vec<f64>,
    b: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Factor Σ[idx, idx] = L Lᵀ into `self.l`.
    fn factor(&mut self, sigma: &DMatrix<f64>) -> Result<()> {
        let d = self.idx.len();
        self.l.clear();
        self.l.resize(d * d, 0.0);
        let mut pivot_min = f64::INFINITY;
        let mut pivot_max: f64 = 0.0;
        for r in 0..d {
            let ir = self.idx[r];
            for c in 0..=r {
                let mut s = sigma[(ir, self.idx[c])];
                for k in 0..c {
                    s -= self.l[r * d + k] * self.l[c * d + k];
                }
                if r == c {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::SingularSubmatrix);
                    }
                    pivot_min = pivot_min.min(s);
                    pivot_max = pivot_max.max(s);
                    self.l[r * d + r] = s.sqrt();
                } else {
                    self.l[r * d + c] = s / self.l[c * d + c];
                }
            }
        }
        if d > 0 && pivot_max / pivot_min > MAX_CONDITION {
            return Err(Error::SingularSubmatrix);
        }
        Ok(())
    }

    /// y = L⁻¹ (x[idx] − μ[idx]).
    fn whiten(&mut self, x: &[f64], mu: &DVector<f64>) {
        let d = self.idx.len();
        self.y.clear();
        for r in 0..d {
            let j = self.idx[r];
            let mut s = x[j] - mu[j];
            for k in 0..r {
                s -= self.l[r * d + k] * self.y[k];
            }
            self.y.push(s / self.l[r * d + r]);
        }
    }

    fn log_det_half(&self, upto: usize) -> f64 {
        let d = self.idx.len();
        (0..upto).map(|r| self.l[r * d + r].ln()).sum()
    }

    fn log_density_prefix(&self, upto: usize) -> f64 {
        let quad: f64 = self.y[..upto].iter().map(|v| v * v).sum();
        -0.5 * (upto as f64 * LN_2PI + quad) - self.log_det_half(upto)
    }
}

/// Log-density of the sub-vector `x[idx]` under N(μ[idx], Σ[idx, idx]).
/// Zero for an empty index list.
pub fn log_density_on(x: &[f64], idx: &[usize], mu: &DVector<f64>, sigma: &DMatrix<f64>, ws: &mut Workspace) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    ws.idx.clear();
    ws.idx.extend_from_slice(idx);
    ws.factor(sigma)?;
    ws.whiten(x, mu);
    Ok(ws.log_density_prefix(idx.len()))
}

/// ln φ(x[w]; μ[w], Σ[w, w]) for the reliable cells of `mask`; 0 when the
/// mask is empty.
pub fn log_density_masked(x: &[f64], mask: &[bool], mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let idx: Vec<usize> = mask.iter().enumerate().filter(|(_, &w)| w).map(|(j, _)| j).collect();
    log_density_on(x, &idx, mu, sigma, &mut Workspace::new())
}

/// One cell conditioned on a set of other cells, together with the
/// log-density of the conditioning cells themselves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellConditional {
    /// ln φ(x[rest]; μ[rest], Σ[rest, rest]).
    pub log_density_rest: f64,
    /// E[X_j | x[rest]].
    pub mean: f64,
    /// Var[X_j | x[rest]].
    pub var: f64,
}

impl CellConditional {
    /// ln φ₁(x_j; mean, var): the increment of the log-density when cell j
    /// joins the conditioning set.
    pub fn log_density_cell(&self, xj: f64) -> f64 {
        let r = xj - self.mean;
        -0.5 * (LN_2PI + self.var.ln() + r * r / self.var)
    }
}

/// Conditions cell `j` on the cells in `rest` (which must not contain `j`)
/// with a single factorization of Σ[rest ∪ {j}], j ordered last.
pub fn condition_cell(
    x: &[f64],
    rest: &[usize],
    j: usize,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    ws: &mut Workspace,
) -> Result<CellConditional> {
    debug_assert!(!rest.contains(&j));
    ws.idx.clear();
    ws.idx.extend_from_slice(rest);
    ws.idx.push(j);
    ws.factor(sigma)?;
    let d = ws.idx.len();
    let m = d - 1;
    // Whiten only the conditioning block; x_j itself may be unavailable.
    ws.y.clear();
    for r in 0..m {
        let c = ws.idx[r];
        let mut s = x[c] - mu[c];
        for k in 0..r {
            s -= ws.l[r * d + k] * ws.y[k];
        }
        ws.y.push(s / ws.l[r * d + r]);
    }
    let shift: f64 = (0..m).map(|k| ws.l[m * d + k] * ws.y[k]).sum();
    let lmm = ws.l[m * d + m];
    Ok(CellConditional { log_density_rest: ws.log_density_prefix(m), mean: mu[j] + shift, var: lmm * lmm })
}

/// Log-density of the reliable block together with the conditional moments
/// of the target block given it.
pub fn condition_block(
    x: &[f64],
    reliable: &[usize],
    target: &[usize],
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    ws: &mut Workspace,
) -> Result<(f64, ConditionalMoments)> {
    let t = target.len();
    if reliable.is_empty() {
        return Ok((
            0.0,
            ConditionalMoments {
                cond_mean: DVector::from_fn(t, |a, _| mu[target[a]]),
                cond_cov: DMatrix::from_fn(t, t, |a, b| sigma[(target[a], target[b])]),
            },
        ));
    }
    let log_density = log_density_on(x, reliable, mu, sigma, ws)?;
    let d = reliable.len();
    // B = L⁻¹ Σ[reliable, target], stored column by column (d × t).
    ws.b.clear();
    ws.b.resize(d * t, 0.0);
    for (a, &ta) in target.iter().enumerate() {
        for r in 0..d {
            let mut s = sigma[(reliable[r], ta)];
            for k in 0..r {
                s -= ws.l[r * d + k] * ws.b[a * d + k];
            }
            ws.b[a * d + r] = s / ws.l[r * d + r];
        }
    }
    let col = |a: usize| &ws.b[a * d..(a + 1) * d];
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>();
    let cond_mean = DVector::from_fn(t, |a, _| mu[target[a]] + dot(col(a), &ws.y));
    let mut cond_cov = DMatrix::zeros(t, t);
    for a in 0..t {
        for b in 0..=a {
            let v = sigma[(target[a], target[b])] - dot(col(a), col(b));
            cond_cov[(a, b)] = v;
            cond_cov[(b, a)] = v;
        }
    }
    Ok((log_density, ConditionalMoments { cond_mean, cond_cov }))
}

/// Conditional moments of `x[target]` given `x[reliable]`. With an empty
/// reliable set these are the marginal moments.
pub fn conditional_moments(
    x: &[f64],
    reliable: &[usize],
    target: &[usize],
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<ConditionalMoments> {
    condition_block(x, reliable, target, mu, sigma, &mut Workspace::new()).map(|(_, m)| m)
}

/// sqrt((x − μ)ᵀ Σ⁻¹ (x − μ)).
pub fn mahalanobis(x: &[f64], mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let mut ws = Workspace::new();
    ws.idx.extend(0..mu.len());
    ws.factor(sigma)?;
    ws.whiten(x, mu);
    Ok(ws.y.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Full-dimensional Gaussian with a cached Cholesky factor, for repeated
/// density evaluations and sampling.
#[derive(Debug, Clone)]
pub struct FactoredGaussian {
    mean: DVector<f64>,
    /// Row-major lower-triangular factor.
    l: Vec<f64>,
    log_norm: f64,
}

impl FactoredGaussian {
    pub fn new(mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<Self> {
        let mut ws = Workspace::new();
        ws.idx.extend(0..mu.len());
        ws.factor(sigma)?;
        let p = mu.len();
        let log_norm = -0.5 * p as f64 * LN_2PI - ws.log_det_half(p);
        Ok(Self { mean: mu.clone(), l: ws.l, log_norm })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Squared Mahalanobis distance of `x`.
    pub fn sq_mahalanobis(&self, x: &[f64]) -> f64 {
        let p = self.dim();
        let mut y = [0.0f64; 32];
        let mut heap;
        let y: &mut [f64] = if p <= 32 {
            &mut y[..p]
        } else {
            heap = vec![0.0; p];
            &mut heap
        };
        let mut quad = 0.0;
        for r in 0..p {
            let mut s = x[r] - self.mean[r];
            for k in 0..r {
                s -= self.l[r * p + k] * y[k];
            }
            y[r] = s / self.l[r * p + r];
            quad += y[r] * y[r];
        }
        quad
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.log_norm - 0.5 * self.sq_mahalanobis(x)
    }

    /// μ + L·e for a vector of standard normal draws `e`.
    pub fn transform(&self, e: &[f64], out: &mut [f64]) {
        let p = self.dim();
        for r in 0..p {
            let mut s = self.mean[r];
            for k in 0..=r {
                s += self.l[r * p + k] * e[k];
            }
            out[r] = s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use crate::testutil::{precision_conditional as precision_oracle, random_spd};

    #[test]
    fn standard_normal_at_mode() {
        let v = log_density_masked(&[0.0], &[true], &DVector::zeros(1), &DMatrix::identity(1, 1)).unwrap();
        assert_abs_diff_eq!(v, -0.918_938_533_204_672_7, epsilon = 1e-12);
    }

    #[test]
    fn empty_mask_is_zero() {
        let v = log_density_masked(&[5.0, -3.0], &[false, false], &DVector::zeros(2), &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn bivariate_hand_value() {
        let v = log_density_masked(&[3.0, 0.0], &[true, true], &DVector::zeros(2), &DMatrix::identity(2, 2)).unwrap();
        assert_abs_diff_eq!(v, -LN_2PI - 4.5, epsilon = 1e-12);
        assert_abs_diff_eq!(v, -6.337_877_066, epsilon = 1e-8);
    }

    #[test]
    fn schur_complement_example() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]);
        let m = conditional_moments(&[f64::NAN, 1.0], &[1], &[0], &DVector::zeros(2), &sigma).unwrap();
        assert_abs_diff_eq!(m.cond_mean[0], 0.9, epsilon = 1e-14);
        assert_abs_diff_eq!(m.cond_cov[(0, 0)], 0.19, epsilon = 1e-14);
    }

    #[test]
    fn diagonal_sigma_gives_marginals() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0, 9.0]));
        let mu = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let m = conditional_moments(&[10.0, -5.0, 0.0], &[0, 2], &[1], &mu, &sigma).unwrap();
        assert_abs_diff_eq!(m.cond_mean[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m.cond_cov[(0, 0)], 4.0, epsilon = 1e-14);
    }

    #[test]
    fn empty_target_and_empty_reliable() {
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let mu = DVector::from_vec(vec![1.0, -1.0]);
        let m = conditional_moments(&[0.0, 0.0], &[0, 1], &[], &mu, &sigma).unwrap();
        assert_eq!(m.cond_mean.len(), 0);
        assert_eq!(m.cond_cov.shape(), (0, 0));
        let m = conditional_moments(&[0.0, 0.0], &[], &[0, 1], &mu, &sigma).unwrap();
        assert_eq!(m.cond_mean, mu);
        assert_eq!(m.cond_cov, sigma);
    }

    #[test]
    fn random_4x4_against_precision_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sigma = random_spd(4, &mut rng);
        let mu = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m = conditional_moments(&x, &[0, 2], &[1, 3], &mu, &sigma).unwrap();
        let (mean, cov) = precision_oracle(&x, &[0, 2], &[1, 3], &mu, &sigma);
        assert!((m.cond_mean - mean).amax() < 1e-10);
        assert!((m.cond_cov - cov).amax() < 1e-10);
    }

    #[test]
    fn all_mask_patterns_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in 1..=4usize {
            let sigma = random_spd(p, &mut rng);
            let mu = DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0));
            let x: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
            for bits in 1u32..(1 << p) {
                let mask: Vec<bool> = (0..p).map(|j| bits & (1 << j) != 0).collect();
                let (rel, tgt) = crate::data::subset_indices(&mask);
                if tgt.is_empty() {
                    continue;
                }
                let m = conditional_moments(&x, &rel, &tgt, &mu, &sigma).unwrap();
                let (mean, cov) = precision_oracle(&x, &rel, &tgt, &mu, &sigma);
                assert!((m.cond_mean - mean).amax() < 1e-10, "p={p} mask={mask:?}");
                assert!((&m.cond_cov - &cov).amax() < 1e-10);
                assert!((&m.cond_cov - m.cond_cov.transpose()).amax() < 1e-10);
                assert!(m.cond_cov.clone().symmetric_eigen().eigenvalues.min() > -1e-10);
            }
        }
    }

    #[test]
    fn mahalanobis_examples() {
        let mu = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(mahalanobis(&[1.0, 1.0], &mu, &DMatrix::identity(2, 2)).unwrap(), 0.0);
        assert_abs_diff_eq!(mahalanobis(&[4.0, 5.0], &mu, &DMatrix::identity(2, 2)).unwrap(), 5.0, epsilon = 1e-14);
    }

    #[test]
    fn singular_block_is_reported() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let r = log_density_masked(&[0.0, 0.0], &[true, true], &DVector::zeros(2), &sigma);
        assert!(matches!(r, Err(Error::SingularSubmatrix)));
    }

    #[test]
    fn cell_conditional_matches_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sigma = random_spd(5, &mut rng);
        let mu = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut ws = Workspace::new();
        let cc = condition_cell(&x, &[0, 3, 4], 2, &mu, &sigma, &mut ws).unwrap();
        let m = conditional_moments(&x, &[0, 3, 4], &[2], &mu, &sigma).unwrap();
        assert_abs_diff_eq!(cc.mean, m.cond_mean[0], epsilon = 1e-12);
        assert_abs_diff_eq!(cc.var, m.cond_cov[(0, 0)], epsilon = 1e-12);
        let rest = log_density_masked(&x, &[true, false, false, true, true], &mu, &sigma).unwrap();
        assert_abs_diff_eq!(cc.log_density_rest, rest, epsilon = 1e-12);
    }

    #[test]
    fn no_overflow_at_extremes() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1e-6, 1e6]));
        let v = log_density_masked(&[1e6, -1e6], &[true, true], &DVector::zeros(2), &sigma).unwrap();
        assert!(v.is_finite());
        let row = [v, v - 1e3];
        assert!(crate::stats::log_sum_exp(&row).is_finite());
    }

    proptest! {
        #[test]
        fn additivity_of_masked_log_density(seed in any::<u64>(), p in 1usize..=6, bits in any::<u32>(), j_raw in any::<usize>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sigma = random_spd(p, &mut rng);
            let mu = DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0));
            let x: Vec<f64> = (0..p).map(|_| rng.random_range(-4.0..4.0)).collect();
            let j = j_raw % p;
            let mut mask: Vec<bool> = (0..p).map(|k| bits & (1 << k) != 0).collect();
            mask[j] = true;
            let full = log_density_masked(&x, &mask, &mu, &sigma).unwrap();
            mask[j] = false;
            let without = log_density_masked(&x, &mask, &mu, &sigma).unwrap();
            let (rest, _) = crate::data::subset_indices(&mask);
            let m = conditional_moments(&x, &rest, &[j], &mu, &sigma).unwrap();
            let r = x[j] - m.cond_mean[0];
            let v = m.cond_cov[(0, 0)];
            let cell = -0.5 * (LN_2PI + v.ln() + r * r / v);
            prop_assert!((full - (without + cell)).abs() < 1e-8);
        }

        #[test]
        fn mahalanobis_is_homogeneous(seed in any::<u64>(), p in 1usize..=6, a in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sigma = random_spd(p, &mut rng);
            let v: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
            let av: Vec<f64> = v.iter().map(|t| a * t).collect();
            let zero = DVector::zeros(p);
            let lhs = mahalanobis(&av, &zero, &sigma).unwrap();
            let rhs = a * mahalanobis(&v, &zero, &sigma).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        }
    }

    #[test]
    fn factored_gaussian_matches_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for p in 1..6 {
            let sigma = random_spd(p, &mut rng);
            let mu = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
            let x: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
            let f = FactoredGaussian::new(&mu, &sigma).unwrap();
            let all = vec![true; p];
            assert_abs_diff_eq!(f.log_density(&x), log_density_masked(&x, &all, &mu, &sigma).unwrap(), epsilon = 1e-12);
            assert_abs_diff_eq!(f.sq_mahalanobis(&x).sqrt(), mahalanobis(&x, &mu, &sigma).unwrap(), epsilon = 1e-12);
            let mut out = vec![0.0; p];
            f.transform(&vec![0.0; p], &mut out);
            assert_eq!(out, mu.iter().copied().collect::<Vec<_>>());
        }
    }
}
