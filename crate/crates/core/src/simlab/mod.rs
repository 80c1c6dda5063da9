//! Synthetic mixtures, cellwise contamination and missingness for
//! simulation studies.

pub mod contamination;
pub mod overlap;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{DataSet, MixtureParams};
use crate::error::{Error, Result};
use crate::gauss::FactoredGaussian;
use crate::rng::{Rng, SeedStream};

pub use contamination::{contaminate_random, contaminate_structural, remove_missing, structural_cells};
pub use overlap::{estimate_overlap, Overlap};

/// Budget for the pairwise-distance rejection of well-separated means.
pub const MEAN_REJECTION_BUDGET: usize = 10_000;
/// Budget of parameter draws screened by the overlap window.
pub const OVERLAP_DRAW_BUDGET: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Separation {
    WellSeparated,
    Close,
}

impl Separation {
    /// Accepted range of the maximum pairwise overlap.
    pub fn overlap_window(self) -> (f64, f64) {
        match self {
            Separation::WellSeparated => (0.0, 0.01),
            Separation::Close => (0.05, 0.06),
        }
    }
}

/// How outlying cells are produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Contamination {
    None,
    /// Uniform replacements outside every component's 99% ellipsoid.
    Uniform { lo: f64, hi: f64 },
    /// Uniform replacements with no ellipsoid check.
    Extreme { lo: f64, hi: f64 },
    /// Replacements along the leading eigenvector of the first component.
    Structural { gamma: f64 },
}

impl Contamination {
    pub fn standard() -> Self {
        Contamination::Uniform { lo: -10.0, hi: 10.0 }
    }

    pub fn extreme() -> Self {
        Contamination::Extreme { lo: -100.0, hi: 100.0 }
    }
}

fn default_rho() -> f64 {
    0.9
}

fn default_mc() -> usize {
    100_000
}

/// Everything needed to draw one synthetic data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub n: usize,
    pub p: usize,
    pub g: usize,
    pub weights: Vec<f64>,
    /// AR(1) correlation of the base covariance.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Components (0-based) whose covariance is a rotation of the base one.
    #[serde(default)]
    pub rotated: Vec<usize>,
    pub separation: Separation,
    #[serde(default = "none_contamination")]
    pub contamination: Contamination,
    #[serde(default)]
    pub contamination_rate: f64,
    #[serde(default)]
    pub missing_rate: f64,
    /// Monte Carlo draws per component for the overlap screen.
    #[serde(default = "default_mc")]
    pub overlap_mc: usize,
}

fn none_contamination() -> Contamination {
    Contamination::None
}

impl ScenarioSpec {
    pub fn check(&self) -> Result<()> {
        if self.g == 0 || self.p == 0 || self.n < 2 {
            return Err(Error::DegenerateDimensions(format!("n = {}, p = {}, G = {}", self.n, self.p, self.g)));
        }
        if self.weights.len() != self.g {
            return Err(Error::LengthMismatch { left: self.weights.len(), right: self.g });
        }
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|&w| !(w > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("weights {:?} are not on the simplex", self.weights)));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::InvalidConfig(format!("|rho| must be < 1, got {}", self.rho)));
        }
        if self.rotated.iter().any(|&k| k >= self.g) {
            return Err(Error::InvalidConfig(format!("rotated components {:?} out of range", self.rotated)));
        }
        if !(0.0..0.5).contains(&self.contamination_rate) {
            return Err(Error::InvalidConfig(format!("contamination rate must lie in [0, 0.5), got {}", self.contamination_rate)));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::InvalidConfig(format!("missing rate must lie in [0, 1), got {}", self.missing_rate)));
        }
        if self.overlap_mc == 0 {
            return Err(Error::InvalidConfig("overlap_mc must be positive".into()));
        }
        Ok(())
    }

    /// Same scenario with another contamination mechanism and rate. The
    /// two-component structural design puts the larger weight on the
    /// contaminated first component.
    pub fn with_contamination(mut self, contamination: Contamination, rate: f64) -> Self {
        if matches!(contamination, Contamination::Structural { .. }) && self.g == 2 && self.weights == [0.3, 0.7] {
            self.weights = vec![0.7, 0.3];
        }
        self.contamination = contamination;
        self.contamination_rate = rate;
        self
    }
}

/// Canonical scenarios 1 to 6.
pub fn build_scenario(id: &str) -> Result<ScenarioSpec> {
    let small = |name: &str, separation, rotated: Vec<usize>| ScenarioSpec {
        name: name.into(),
        n: 200,
        p: 5,
        g: 2,
        weights: vec![0.3, 0.7],
        rho: 0.9,
        rotated,
        separation,
        contamination: Contamination::None,
        contamination_rate: 0.0,
        missing_rate: 0.0,
        overlap_mc: default_mc(),
    };
    let large = |name: &str, rotated: Vec<usize>| ScenarioSpec {
        name: name.into(),
        n: 400,
        p: 15,
        g: 4,
        weights: vec![0.2, 0.2, 0.3, 0.3],
        rho: 0.9,
        rotated,
        separation: Separation::WellSeparated,
        contamination: Contamination::None,
        contamination_rate: 0.0,
        missing_rate: 0.0,
        overlap_mc: default_mc(),
    };
    Ok(match id {
        "1" => small("1", Separation::WellSeparated, vec![]),
        "2" => small("2", Separation::Close, vec![]),
        "3" => large("3", vec![]),
        "4" => small("4", Separation::WellSeparated, vec![1]),
        "5" => small("5", Separation::Close, vec![1]),
        "6" => large("6", vec![2, 3]),
        other => return Err(Error::UnknownScenario(other.to_string())),
    })
}

/// Toeplitz matrix with entries ρ^|i−j|.
pub fn ar1_covariance(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()))
}

/// Uniformly distributed orthogonal matrix: QR of a Gaussian matrix with
/// the signs of R's diagonal folded into Q.
pub fn random_rotation(p: usize, rng: &mut Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for k in 0..p {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q
}

/// Component means: the first at the origin, the others uniform on [0, 10]
/// (well separated, pairwise distances at least 5) or on [1, 3] (close).
pub fn generate_means(g: usize, p: usize, separation: Separation, rng: &mut Rng) -> Result<Vec<DVector<f64>>> {
    let (lo, hi) = match separation {
        Separation::WellSeparated => (0.0, 10.0),
        Separation::Close => (1.0, 3.0),
    };
    for _ in 0..MEAN_REJECTION_BUDGET {
        let mut means = vec![DVector::zeros(p)];
        for _ in 1..g {
            means.push(DVector::from_fn(p, |_, _| rng.random_range(lo..hi)));
        }
        let far_enough = separation == Separation::Close
            || (0..g).all(|a| (a + 1..g).all(|b| (&means[a] - &means[b]).norm() >= 5.0));
        if far_enough {
            return Ok(means);
        }
    }
    Err(Error::RejectionBudgetExceeded(format!("no well-separated means after {MEAN_REJECTION_BUDGET} draws")))
}

/// Labelled clean sample together with its contaminated, partially
/// observed version.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: ScenarioSpec,
    pub params: MixtureParams,
    /// Orthogonal matrix used for rotated covariances, if any.
    pub rotation: Option<Vec<Vec<f64>>>,
    /// Maximum pairwise overlap of the accepted parameters.
    pub omega_max: f64,
    /// 0-based component of every row.
    pub labels: Vec<usize>,
    #[serde(skip)]
    pub clean_values: DMatrix<f64>,
    /// Contaminated values; NaN where missing.
    #[serde(skip)]
    pub values: DMatrix<f64>,
    #[serde(skip)]
    pub outlier_mask: DMatrix<bool>,
    #[serde(skip)]
    pub missing_mask: DMatrix<bool>,
}

impl GroundTruth {
    pub fn dataset(&self) -> Result<DataSet> {
        DataSet::new(self.values.clone(), self.missing_mask.map(|m| !m))
    }

    pub fn outlier_count(&self) -> usize {
        self.outlier_mask.iter().filter(|&&o| o).count()
    }
}

/// Parameters screened into the separation regime's overlap window.
pub fn draw_params(spec: &ScenarioSpec, rng: &mut Rng) -> Result<(MixtureParams, Option<DMatrix<f64>>, f64)> {
    let base = ar1_covariance(spec.p, spec.rho);
    let (lo, hi) = spec.separation.overlap_window();
    for _ in 0..OVERLAP_DRAW_BUDGET {
        let means = generate_means(spec.g, spec.p, spec.separation, rng)?;
        let rotation = if spec.rotated.is_empty() { None } else { Some(random_rotation(spec.p, rng)) };
        let covariances = (0..spec.g)
            .map(|k| match &rotation {
                Some(q) if spec.rotated.contains(&k) => {
                    let s = q * &base * q.transpose();
                    (&s + s.transpose()) * 0.5
                }
                _ => base.clone(),
            })
            .collect();
        let params = MixtureParams::new(spec.weights.clone(), means, covariances)?;
        let omega = estimate_overlap(&params, spec.overlap_mc, rng)?.max;
        if omega < hi && (lo == 0.0 || omega > lo) {
            return Ok((params, rotation, omega));
        }
    }
    Err(Error::RejectionBudgetExceeded(format!("no parameter draw in overlap window ({lo}, {hi}) after {OVERLAP_DRAW_BUDGET} draws")))
}

/// Labels and clean values drawn from `params`.
pub fn sample_mixture(params: &MixtureParams, n: usize, rng: &mut Rng) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let chooser = WeightedIndex::new(&params.weights).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let comps: Vec<FactoredGaussian> =
        (0..params.g()).map(|k| FactoredGaussian::new(&params.means[k], &params.covariances[k])).collect::<Result<_>>()?;
    let p = params.p();
    let mut values = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    let mut e = vec![0.0; p];
    let mut x = vec![0.0; p];
    for i in 0..n {
        let k = chooser.sample(rng);
        e.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
        comps[k].transform(&e, &mut x);
        for j in 0..p {
            values[(i, j)] = x[j];
        }
        labels.push(k);
    }
    Ok((labels, values))
}

/// Draws one replicate of `spec` from `stream`: parameters, clean sample,
/// contamination, then missingness among uncontaminated cells.
pub fn generate(spec: &ScenarioSpec, stream: SeedStream) -> Result<GroundTruth> {
    spec.check()?;
    let (params, rotation, omega_max) = draw_params(spec, &mut stream.child(0).rng())?;
    let (labels, clean_values) = sample_mixture(&params, spec.n, &mut stream.child(1).rng())?;
    let mut rng = stream.child(2).rng();
    let (values, outlier_mask) = match spec.contamination {
        Contamination::None => (clean_values.clone(), DMatrix::from_element(spec.n, spec.p, false)),
        Contamination::Uniform { lo, hi } => contaminate_random(&clean_values, &params, spec.contamination_rate, lo, hi, true, &mut rng)?,
        Contamination::Extreme { lo, hi } => contaminate_random(&clean_values, &params, spec.contamination_rate, lo, hi, false, &mut rng)?,
        Contamination::Structural { gamma } => {
            contaminate_structural(&clean_values, &labels, &params, spec.contamination_rate, gamma, &mut rng)?
        }
    };
    let missing_mask = remove_missing(&outlier_mask, spec.missing_rate, &mut stream.child(3).rng())?;
    let mut values = values;
    for (v, &m) in values.iter_mut().zip(missing_mask.iter()) {
        if m {
            *v = f64::NAN;
        }
    }
    Ok(GroundTruth {
        spec: spec.clone(),
        params,
        rotation: rotation.map(|q| crate::data::rows_of(&q)),
        omega_max,
        labels,
        clean_values,
        values,
        outlier_mask,
        missing_mask,
    })
}
