//! Fixture builders shared by the benchmarks.

use cellgmm::simlab::{build_scenario, generate, Contamination, GroundTruth};
use cellgmm::rng::SeedStream;
use cellgmm::{CellMask, DataSet, FitConfig, InitConfig, InitialState, MixtureParams};

/// One synthetic data set with its ground truth.
pub struct Fixture {
    pub truth: GroundTruth,
    pub data: DataSet,
    pub config: FitConfig,
}

impl Fixture {
    /// Canonical scenario `id` with `pct` percent standard contamination.
    pub fn scenario(id: &str, pct: u32, seed: u64) -> Self {
        let mut spec = build_scenario(id).expect("canonical scenario");
        if pct > 0 {
            spec = spec.with_contamination(Contamination::standard(), f64::from(pct) / 100.0);
        }
        let truth = generate(&spec, SeedStream::new(seed)).expect("scenario generates");
        let data = truth.dataset().expect("valid data set");
        let config = FitConfig { g: spec.g, n_restarts: 1, seed, ..FitConfig::default() };
        Self { truth, data, config }
    }

    pub fn params(&self) -> &MixtureParams {
        &self.truth.params
    }

    /// All observed cells reliable.
    pub fn full_mask(&self) -> CellMask {
        CellMask::from_observed(&self.data)
    }

    pub fn h(&self) -> usize {
        self.config.h_for(self.data.n())
    }

    /// Start from the true parameters with every observed cell reliable.
    pub fn oracle_start(&self) -> InitialState {
        InitialState { params: self.params().clone(), mask: self.full_mask() }
    }

    pub fn init_config(&self) -> InitConfig {
        InitConfig::default()
    }
}
