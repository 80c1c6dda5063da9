//! Data model shared by every stage of the estimator: the observed sample,
//! the reliability mask, mixture parameters, posteriors and fit outputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// An n×p sample with a per-cell observed indicator.
///
/// Values at unobserved cells are stored as NaN so that any accidental
/// read poisons downstream arithmetic instead of silently using garbage.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    values: DMatrix<f64>,
    observed: DMatrix<bool>,
}

impl DataSet {
    pub fn new(mut values: DMatrix<f64>, observed: DMatrix<bool>) -> Result<Self> {
        if values.shape() != observed.shape() {
            return Err(Error::ShapeMismatch { left: values.shape(), right: observed.shape() });
        }
        let (n, p) = values.shape();
        if n < 2 || p < 1 {
            return Err(Error::DegenerateDimensions(format!("need n >= 2 and p >= 1, got n = {n}, p = {p}")));
        }
        for j in 0..p {
            if !observed.column(j).iter().any(|&o| o) {
                return Err(Error::DegenerateDimensions(format!("column {j} has no observed cell")));
            }
        }
        for (v, &o) in values.iter_mut().zip(observed.iter()) {
            if !o {
                *v = f64::NAN;
            }
        }
        Ok(Self { values, observed })
    }

    /// A dataset without missing cells.
    pub fn complete(values: DMatrix<f64>) -> Result<Self> {
        let observed = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(values, observed)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn observed(&self) -> &DMatrix<bool> {
        &self.observed
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[(i, j)]
    }

    /// Row `i` as a contiguous vector (NaN at missing cells).
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    pub fn observed_row(&self, i: usize) -> Vec<bool> {
        self.observed.row(i).iter().copied().collect()
    }

    pub fn observed_in_column(&self, j: usize) -> usize {
        self.observed.column(j).iter().filter(|&&o| o).count()
    }

    pub fn missing_count(&self) -> usize {
        self.observed.iter().filter(|&&o| !o).count()
    }
}

/// Binary reliability matrix: `true` marks a reliable cell, `false` a
/// flagged or missing one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellMask {
    w: DMatrix<bool>,
}

impl CellMask {
    pub fn new(w: DMatrix<bool>) -> Self {
        Self { w }
    }

    /// Every observed cell reliable, missing cells unreliable.
    pub fn from_observed(data: &DataSet) -> Self {
        Self { w: data.observed().clone() }
    }

    pub fn matrix(&self) -> &DMatrix<bool> {
        &self.w
    }

    pub fn shape(&self) -> (usize, usize) {
        self.w.shape()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.w[(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, reliable: bool) {
        self.w[(i, j)] = reliable;
    }

    pub fn row(&self, i: usize) -> Vec<bool> {
        self.w.row(i).iter().copied().collect()
    }

    pub fn column_count(&self, j: usize) -> usize {
        self.w.column(j).iter().filter(|&&b| b).count()
    }

    pub fn reliable_count(&self) -> usize {
        self.w.iter().filter(|&&b| b).count()
    }

    /// Forces missing cells to unreliable.
    pub fn restrict_to_observed(&mut self, data: &DataSet) {
        for (w, &o) in self.w.iter_mut().zip(data.observed().iter()) {
            *w &= o;
        }
    }
}

/// Weights, means and covariances of a G-component Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

impl MixtureParams {
    pub fn new(weights: Vec<f64>, means: Vec<DVector<f64>>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        let params = Self { weights, means, covariances };
        params.check_shapes()?;
        Ok(params)
    }

    pub fn g(&self) -> usize {
        self.weights.len()
    }

    pub fn p(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    fn check_shapes(&self) -> Result<()> {
        let g = self.weights.len();
        if g == 0 {
            return Err(Error::DegenerateDimensions("mixture with zero components".into()));
        }
        if self.means.len() != g || self.covariances.len() != g {
            return Err(Error::LengthMismatch { left: g, right: self.means.len().min(self.covariances.len()) });
        }
        let p = self.p();
        for (m, s) in self.means.iter().zip(&self.covariances) {
            if m.len() != p || s.shape() != (p, p) {
                return Err(Error::ShapeMismatch { left: (p, p), right: s.shape() });
            }
        }
        Ok(())
    }

    /// Checks the simplex, symmetry and positive-definiteness invariants.
    pub fn validate(&self) -> Result<()> {
        self.check_shapes()?;
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.weights.iter().any(|&w| !(w > 0.0 && w <= 1.0)) {
            return Err(Error::InvalidConfig(format!("weights {:?} are not on the open simplex", self.weights)));
        }
        for s in &self.covariances {
            if (s - s.transpose()).amax() > 1e-10 * s.amax().max(1.0) {
                return Err(Error::InvalidConfig("covariance matrix is not symmetric".into()));
            }
            if s.clone().cholesky().is_none() {
                return Err(Error::SingularSubmatrix);
            }
        }
        Ok(())
    }

    /// max over (g, j) of λ_j(Σ_g) divided by the min over (g, j).
    pub fn eigenvalue_ratio(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &self.covariances {
            for &l in s.clone().symmetric_eigen().eigenvalues.iter() {
                lo = lo.min(l);
                hi = hi.max(l);
            }
        }
        hi / lo
    }

    /// Relabels components: output component `k` is input component `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            weights: order.iter().map(|&k| self.weights[k]).collect(),
            means: order.iter().map(|&k| self.means[k].clone()).collect(),
            covariances: order.iter().map(|&k| self.covariances[k].clone()).collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    g: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
}

impl Serialize for MixtureParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsRepr {
            g: self.g(),
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| m.iter().copied().collect()).collect(),
            covariances: self.covariances.iter().map(rows_of).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MixtureParams {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = ParamsRepr::deserialize(deserializer)?;
        if repr.g != repr.weights.len() {
            return Err(D::Error::custom(format!("g = {} but {} weights", repr.g, repr.weights.len())));
        }
        let means = repr.means.into_iter().map(DVector::from_vec).collect();
        let covariances = repr
            .covariances
            .iter()
            .map(|rows| {
                let p = rows.len();
                if rows.iter().any(|r| r.len() != p) {
                    return Err(D::Error::custom("covariance matrix is not square"));
                }
                Ok(DMatrix::from_fn(p, p, |a, b| rows[a][b]))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        MixtureParams::new(repr.weights, means, covariances).map_err(D::Error::custom)
    }
}

pub(crate) fn rows_of<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Posterior membership probabilities, one row per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub z: DMatrix<f64>,
}

impl Posterior {
    pub fn new(z: DMatrix<f64>) -> Self {
        Self { z }
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn g(&self) -> usize {
        self.z.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.z.row(i).iter().copied().collect()
    }

    /// Maximum-a-posteriori component per unit (smallest index on ties).
    pub fn map_labels(&self) -> Vec<usize> {
        (0..self.n())
            .map(|i| {
                let row = self.z.row(i);
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Whether the second, penalized fitting phase runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyMode {
    None,
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub g: usize,
    /// Fraction of rows that must stay reliable in every column.
    pub h_frac: f64,
    /// Bound on the ratio of largest to smallest covariance eigenvalue.
    pub c: f64,
    pub penalty_mode: PenaltyMode,
    /// Tail probability of the χ²₁ cut-off used by the penalty.
    pub alpha_quantile: f64,
    pub max_iter: usize,
    /// Aitken tolerance.
    pub epsilon: f64,
    pub seed: u64,
    pub n_restarts: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            g: 2,
            h_frac: 0.75,
            c: 50.0,
            penalty_mode: PenaltyMode::Auto,
            alpha_quantile: 0.01,
            max_iter: 500,
            epsilon: 1e-6,
            seed: 0,
            n_restarts: 1,
        }
    }
}

impl FitConfig {
    pub fn h_for(&self, n: usize) -> usize {
        // ceil with a guard against representation noise (0.75 * 200 = 150 exactly).
        ((self.h_frac * n as f64) - 1e-9).ceil().max(0.0) as usize
    }

    pub fn check(&self) -> Result<()> {
        if self.g < 1 {
            return Err(Error::InvalidConfig("g must be at least 1".into()));
        }
        if !(self.h_frac > 0.0 && self.h_frac <= 1.0) {
            return Err(Error::InvalidConfig(format!("h_frac must lie in (0, 1], got {}", self.h_frac)));
        }
        if !(self.c >= 1.0) {
            return Err(Error::InvalidConfig(format!("c must be >= 1, got {}", self.c)));
        }
        if !(self.alpha_quantile > 0.0 && self.alpha_quantile < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1), got {}", self.alpha_quantile)));
        }
        if self.max_iter == 0 || self.n_restarts == 0 {
            return Err(Error::InvalidConfig("max_iter and n_restarts must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Everything a fit produces.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: MixtureParams,
    pub mask: CellMask,
    pub posterior: Posterior,
    /// Original values at reliable cells, MAP-component conditional means elsewhere.
    pub imputed: DMatrix<f64>,
    /// Standardized cellwise residuals; NaN at missing cells.
    pub residuals: DMatrix<f64>,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.posterior.map_labels()
    }
}

impl Serialize for FitResult {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            params: &'a MixtureParams,
            mask: Vec<Vec<u8>>,
            posterior: Vec<Vec<f64>>,
            imputed: Vec<Vec<f64>>,
            residuals: Vec<Vec<Option<f64>>>,
            objective_trace: &'a [f64],
            converged: bool,
            iterations: usize,
        }
        let mask = self.mask.matrix().map(u8::from);
        let residuals = self.residuals.map(|r| if r.is_finite() { Some(r) } else { None });
        Repr {
            params: &self.params,
            mask: rows_of(&mask),
            posterior: rows_of(&self.posterior.z),
            imputed: rows_of(&self.imputed),
            residuals: rows_of(&residuals),
            objective_trace: &self.objective_trace,
            converged: self.converged,
            iterations: self.iterations,
        }
        .serialize(serializer)
    }
}

/// Checks a dataset against a configuration and returns h.
pub fn validate_dataset(data: &DataSet, cfg: &FitConfig) -> Result<usize> {
    cfg.check()?;
    let (n, p) = (data.n(), data.p());
    if p == 0 || n < cfg.g {
        return Err(Error::DegenerateDimensions(format!("n = {n}, p = {p}, G = {}", cfg.g)));
    }
    for i in 0..n {
        for j in 0..p {
            if data.is_observed(i, j) && !data.value(i, j).is_finite() {
                return Err(Error::NonFiniteValue { row: i, col: j });
            }
        }
    }
    let h = cfg.h_for(n);
    for j in 0..p {
        let observed = data.observed_in_column(j);
        if observed < h {
            return Err(Error::ColumnTooSparse { column: j, observed, h });
        }
    }
    Ok(h)
}

/// Splits a mask row into its reliable and unreliable coordinate indices,
/// both ascending.
pub fn subset_indices(mask_row: &[bool]) -> (Vec<usize>, Vec<usize>) {
    let mut reliable = Vec::with_capacity(mask_row.len());
    let mut unreliable = Vec::new();
    for (j, &w) in mask_row.iter().enumerate() {
        if w {
            reliable.push(j);
        } else {
            unreliable.push(j);
        }
    }
    (reliable, unreliable)
}
