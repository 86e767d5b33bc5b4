//! Exact and brute-force references for the particle estimators.

mod finite_diff;
mod hmm;
mod kalman;

pub use finite_diff::{finite_diff, finite_diff_vec, DEFAULT_STEP};
pub use hmm::{
    hmm_forward, hmm_score_increment, hmm_smoothed_exact, hmm_tangent_exact, HmmExactState, HmmSmoothed,
};
pub use kalman::{kalman_filter, KalmanState};
