//! Particle estimation of filter derivatives and online parameter
//! learning in general state-space models.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: the [`StateSpaceModel`] contract.
//! * [`models`]: linear-Gaussian, stochastic-volatility, finite-state and
//!   range-bearing SLAM models, with trajectory simulation.
//! * [`smc`]: the bootstrap particle filter.
//! * [`smoothing`]: backward statistics of additive functionals, by exact
//!   forward-only smoothing (`O(N²)`) or by PaRIS backward sampling (`O(N K̃)`).
//! * [`tangent`]: the tangent-filter estimator.
//! * [`rml`]: recursive maximum likelihood on top of it.
//! * [`oracle`]: exact references (HMM forward and sensitivity recursions,
//!   Kalman filter, finite differences).
//!
//! All randomness flows from a [`StreamSeed`]. Every particle draws from its
//! own substream keyed by seed, time and index, so results are identical
//! for any number of worker threads.

pub mod error;
pub mod model;
pub mod models;
pub mod oracle;
pub mod rml;
pub mod rng;
pub mod smc;
pub mod smoothing;
pub mod tangent;

pub use error::{Error, Result};
pub use model::{
    check_parameter, density_bound, emission_grad, score_increment, transition_density, GradVector,
    ParameterVector, StateSpaceModel,
};
pub use rml::{
    project, rml_init, rml_step, step_size, zeta_hat, RmlConfig, RmlCsv, RmlDiagnostics, RmlState, RmlStepReport,
    StepSchedule, ZetaTriple,
};
pub use rng::{Purpose, StreamSeed};
pub use smc::{
    estimate, init_cloud, propagate, sample_categorical, weight_cloud, CategoricalSampler, EstimateMode,
    ParticleCloud,
};
pub use smoothing::{
    backward_index, ffbsm_update, paris_update, smoothed_estimate, AdditiveFunctional, BackwardSampler,
    BackwardSamplerConfig, BackwardStatistics, FnFunctional, ScoreFunctional, UpdateDiagnostics, UpdateRule,
};
pub use tangent::{
    tangent_estimate, tangent_init, tangent_measure, tangent_step, TangentCsv, TangentEstimate, TangentState,
    TestFunction,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/particle-filter.md")]
    mod particle_filter {}
    #[doc = include_str!("../../../book/src/smoothing.md")]
    mod smoothing {}
    #[doc = include_str!("../../../book/src/tangent.md")]
    mod tangent {}
    #[doc = include_str!("../../../book/src/rml.md")]
    mod rml {}
    #[doc = include_str!("../../../book/src/determinism.md")]
    mod determinism {}
    #[doc = include_str!("../../../book/src/oracles.md")]
    mod oracles {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
