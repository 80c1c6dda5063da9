//! Fixtures shared by the unit tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::{CellMask, MixtureParams};

pub(crate) fn random_spd(p: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(p, p) * 0.3
}

/// Conditional moments read from the precision matrix of the marginal on
/// target ∪ reliable; independent of the Cholesky kernels.
pub(crate) fn precision_conditional(
    x: &[f64],
    reliable: &[usize],
    target: &[usize],
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let all: Vec<usize> = target.iter().chain(reliable).copied().collect();
    let s = DMatrix::from_fn(all.len(), all.len(), |a, b| sigma[(all[a], all[b])]);
    let k = s.try_inverse().unwrap();
    let t = target.len();
    let ktt = k.view((0, 0), (t, t)).into_owned();
    let ktr = k.view((0, t), (t, reliable.len())).into_owned();
    let ktt_inv = ktt.try_inverse().unwrap();
    let dev = DVector::from_fn(reliable.len(), |a, _| x[reliable[a]] - mu[reliable[a]]);
    let mean = DVector::from_fn(t, |a, _| mu[target[a]]) - &ktt_inv * ktr * dev;
    (mean, ktt_inv)
}

/// Log-density of x[idx] from an explicit inverse and determinant.
pub(crate) fn naive_log_density(x: &[f64], idx: &[usize], mu: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let d = idx.len();
    let s = DMatrix::from_fn(d, d, |a, b| sigma[(idx[a], idx[b])]);
    let r = DVector::from_fn(d, |a, _| x[idx[a]] - mu[idx[a]]);
    let quad = (r.transpose() * s.clone().try_inverse().unwrap() * &r)[(0, 0)];
    -0.5 * (d as f64 * crate::stats::LN_2PI + s.determinant().ln() + quad)
}

pub(crate) fn random_params(g: usize, p: usize, rng: &mut impl Rng) -> MixtureParams {
    let raw: Vec<f64> = (0..g).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    MixtureParams::new(
        raw.iter().map(|w| w / total).collect(),
        (0..g).map(|_| DVector::from_fn(p, |_, _| rng.random_range(-3.0..3.0))).collect(),
        (0..g).map(|_| random_spd(p, rng)).collect(),
    )
    .unwrap()
}

pub(crate) fn random_mask(n: usize, p: usize, keep: f64, rng: &mut impl Rng) -> CellMask {
    CellMask::new(DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() < keep))
}
