//! The contract every state-space model implements.
//!
//! A model supplies an initial law (independent of the parameter), a
//! transition density `q(x, x')` with sampler, an emission density
//! `g(x, y)` with sampler, analytic gradients of both log-densities with
//! respect to the parameter, and a uniform bound on the transition density.
//! The bound is what makes accept-reject backward sampling exact.
//!
//! Trait methods take the parameter as a plain slice and assume it is
//! admissible. The free functions in this module are the checked entry
//! points: they validate the parameter first.

use std::fmt::Debug;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gradient with respect to the model parameter.
pub type GradVector = Vec<f64>;

/// A point of the parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    /// Fails if any entry is not finite.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InadmissibleParameter(format!(
                "entry {k} is not finite ({})",
                values[k]
            )));
        }
        Ok(ParameterVector(values))
    }

    pub fn empty() -> Self {
        ParameterVector(Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for ParameterVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A general state-space model with a parameter-free initial distribution.
///
/// The transition methods receive the time index `t` of the source state so
/// that models driven by known inputs (the SLAM motion commands) can look
/// them up. Time-homogeneous models ignore it.
///
/// The `add_grad_*` methods *accumulate* into `out`, which has length
/// [`param_dim`](Self::param_dim).
pub trait StateSpaceModel: Send + Sync {
    type State: Clone + Debug + Send + Sync;
    type Obs: Clone + Debug + Send + Sync;

    fn param_dim(&self) -> usize;

    /// Rejects parameters outside the admissible set.
    fn validate(&self, theta: &[f64]) -> Result<()>;

    /// Clamps a parameter into the admissible set.
    fn project(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;

    fn sample_transition<R: Rng + ?Sized>(
        &self,
        theta: &[f64],
        t: usize,
        x: &Self::State,
        rng: &mut R,
    ) -> Self::State;

    fn transition_density(&self, theta: &[f64], t: usize, x: &Self::State, x_next: &Self::State)
        -> f64;

    fn log_transition_density(
        &self,
        theta: &[f64],
        t: usize,
        x: &Self::State,
        x_next: &Self::State,
    ) -> f64 {
        self.transition_density(theta, t, x, x_next).ln()
    }

    /// Upper bound on `transition_density` over all state pairs.
    fn density_bound(&self, theta: &[f64]) -> f64;

    fn emission_density(&self, theta: &[f64], x: &Self::State, y: &Self::Obs) -> f64;

    fn log_emission_density(&self, theta: &[f64], x: &Self::State, y: &Self::Obs) -> f64 {
        self.emission_density(theta, x, y).ln()
    }

    fn sample_emission<R: Rng + ?Sized>(&self, theta: &[f64], x: &Self::State, rng: &mut R)
        -> Self::Obs;

    /// `out += ∇θ log g(x, y)`.
    fn add_grad_log_emission(
        &self,
        theta: &[f64],
        x: &Self::State,
        y: &Self::Obs,
        out: &mut [f64],
    ) -> Result<()>;

    /// `out += ∇θ log q(x, x')`.
    fn add_grad_log_transition(
        &self,
        theta: &[f64],
        t: usize,
        x: &Self::State,
        x_next: &Self::State,
        out: &mut [f64],
    ) -> Result<()>;

    /// `out += h̃(x, x') = ∇θ log g(x, y) + ∇θ log q(x, x')`, where `y` is
    /// the observation at the time of `x`.
    fn add_score_increment(
        &self,
        theta: &[f64],
        t: usize,
        x: &Self::State,
        x_next: &Self::State,
        y: &Self::Obs,
        out: &mut [f64],
    ) -> Result<()> {
        self.add_grad_log_emission(theta, x, y, out)?;
        self.add_grad_log_transition(theta, t, x, x_next, out)
    }

    /// Coordinates used when writing states to CSV.
    fn state_coords(&self, x: &Self::State) -> Vec<f64>;
}

fn check_dim<M: StateSpaceModel>(model: &M, theta: &ParameterVector) -> Result<()> {
    if theta.dim() != model.param_dim() {
        return Err(Error::Dimension(format!(
            "parameter has dimension {} but the model expects {}",
            theta.dim(),
            model.param_dim()
        )));
    }
    Ok(())
}

/// Validates `theta` against the model: dimension and admissibility.
pub fn check_parameter<M: StateSpaceModel>(model: &M, theta: &ParameterVector) -> Result<()> {
    check_dim(model, theta)?;
    model.validate(theta)
}

pub fn transition_density<M: StateSpaceModel>(
    model: &M,
    theta: &ParameterVector,
    t: usize,
    x: &M::State,
    x_next: &M::State,
) -> Result<f64> {
    check_parameter(model, theta)?;
    Ok(model.transition_density(theta, t, x, x_next))
}

pub fn density_bound<M: StateSpaceModel>(model: &M, theta: &ParameterVector) -> Result<f64> {
    check_parameter(model, theta)?;
    Ok(model.density_bound(theta))
}

/// Complete-data score increment `h̃(x, x')`; `y` belongs to the time of `x`.
pub fn score_increment<M: StateSpaceModel>(
    model: &M,
    theta: &ParameterVector,
    t: usize,
    x: &M::State,
    x_next: &M::State,
    y: &M::Obs,
) -> Result<GradVector> {
    check_parameter(model, theta)?;
    if model.emission_density(theta, x, y) <= 0.0 {
        return Err(Error::ZeroDensity("emission"));
    }
    if model.transition_density(theta, t, x, x_next) <= 0.0 {
        return Err(Error::ZeroDensity("transition"));
    }
    let mut out = vec![0.0; model.param_dim()];
    model.add_score_increment(theta, t, x, x_next, y, &mut out)?;
    Ok(out)
}

/// Gradient of the emission density itself (not its logarithm).
pub fn emission_grad<M: StateSpaceModel>(
    model: &M,
    theta: &ParameterVector,
    x: &M::State,
    y: &M::Obs,
) -> Result<GradVector> {
    check_parameter(model, theta)?;
    let g = model.emission_density(theta, x, y);
    let mut out = vec![0.0; model.param_dim()];
    if g == 0.0 {
        return Ok(out);
    }
    model.add_grad_log_emission(theta, x, y, &mut out)?;
    out.iter_mut().for_each(|v| *v *= g);
    Ok(out)
}
