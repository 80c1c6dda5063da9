//! Two-stage initialization: a reliability mask from low-dimensional
//! trimmed clustering, then mixture parameters from clustering on random
//! variable subsets.

pub mod mask;
pub mod params;
pub mod tclust;

use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::estimator::InitialState;
use crate::rng::{Rng, SeedStream};

pub use mask::init_mask;
pub use params::{init_params, partial_distance, trimmed_kmeans_centers, CenterClustering, PartialCenter};
pub use tclust::{mini_tclust, TclustFit};

/// Trimming levels and effort of the initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    /// Assumed contamination level the other trimming levels derive from.
    pub alpha_true: f64,
    pub alpha_tclust: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha_a1: f64,
    pub alpha_a2: f64,
    pub n_rep: usize,
    pub n_start: usize,
    pub n_iter: usize,
    pub tclust_starts: usize,
    pub tclust_iters: usize,
    /// Eigenvalue-ratio bound inside the small trimmed clusterings.
    pub tclust_c: f64,
}

impl InitConfig {
    pub fn from_alpha(alpha_true: f64) -> Self {
        Self {
            alpha_true,
            alpha_tclust: 2.0 * alpha_true,
            alpha1: alpha_true,
            alpha2: alpha_true,
            alpha_a1: alpha_true,
            alpha_a2: 2.0 * alpha_true,
            n_rep: 40,
            n_start: 10,
            n_iter: 10,
            tclust_starts: 16,
            tclust_iters: 20,
            tclust_c: 50.0,
        }
    }

    /// These trimming levels with the counts and constraint of `other`.
    pub fn with_effort_of(self, other: &InitConfig) -> Self {
        Self {
            n_rep: other.n_rep,
            n_start: other.n_start,
            n_iter: other.n_iter,
            tclust_starts: other.tclust_starts,
            tclust_iters: other.tclust_iters,
            tclust_c: other.tclust_c,
            ..self
        }
    }

    pub fn check(&self) -> Result<()> {
        let alphas = [self.alpha_true, self.alpha_tclust, self.alpha1, self.alpha2, self.alpha_a1, self.alpha_a2];
        if alphas.iter().any(|a| !(0.0..0.5).contains(a)) {
            return Err(Error::InvalidConfig(format!("initialization trimming levels must lie in [0, 0.5): {alphas:?}")));
        }
        if self.n_rep == 0 || self.n_start == 0 || self.n_iter == 0 || self.tclust_starts == 0 || self.tclust_iters == 0 {
            return Err(Error::InvalidConfig("initialization counts must be positive".into()));
        }
        if !(self.tclust_c >= 1.0) {
            return Err(Error::InvalidConfig(format!("tclust_c must be >= 1, got {}", self.tclust_c)));
        }
        Ok(())
    }
}

impl Default for InitConfig {
    fn default() -> Self {
        Self::from_alpha(0.03)
    }
}

/// Initial mask and parameters for one start, drawing every random choice
/// from streams derived from `rng`.
pub fn initialize(data: &DataSet, g: usize, h: usize, c: f64, cfg: &InitConfig, rng: &mut Rng) -> Result<InitialState> {
    use rand::Rng as _;
    cfg.check()?;
    let root = SeedStream::new(rng.random());
    let mask = init_mask(data, g, h, cfg, root.child(0))?;
    let params = init_params(data, &mask, g, c, cfg, root.child(1))?;
    Ok(InitialState { params, mask })
}
