//! The cellwise-robust mixture estimator.

pub mod cstep;
pub mod driver;
pub mod em;
pub mod objective;
pub mod outputs;
pub mod penalty;

pub use cstep::{c_step, delta_penalized, delta_unpenalized, update_mask_column, PenaltyTerms};
pub use driver::{fit, fit_from, fit_two_phase, fit_two_phase_restarts, run_phase, InitialState, PhaseOutcome, TwoPhaseFit};
pub use em::{e_step, m_step, Completion};
pub use objective::{evaluate, penalty_cost, row_contribution};
pub use outputs::{impute, residual_threshold, standardized_residuals};
pub use penalty::{aitken_converged, compute_penalty};
