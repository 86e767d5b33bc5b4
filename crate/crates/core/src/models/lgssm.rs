use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{normal_log_pdf, normal_pdf, TrajectoryFormat};
use crate::error::{Error, Result};
use crate::model::StateSpaceModel;

/// Which of `(φ, σ²)` are free parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LgssmParams {
    None,
    Phi,
    Sigma2,
    Both,
}

/// Scalar linear-Gaussian model
/// `X_{t+1} = φ X_t + σ V`, `Y_t = X_t + √r U`, `X_0 ~ N(0, p₀)`.
///
/// Entries not selected by `params` stay at their stored values. The
/// initial variance `p₀` is fixed at construction (stationary variance of
/// the stored `φ, σ²`) so that the initial law does not move with θ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LgssmModel {
    pub phi: f64,
    pub sigma2: f64,
    pub obs_var: f64,
    pub init_var: f64,
    pub params: LgssmParams,
}

impl LgssmModel {
    pub fn new(phi: f64, sigma2: f64, obs_var: f64, params: LgssmParams) -> Result<Self> {
        if !(phi.abs() < 1.0) {
            return Err(Error::InadmissibleParameter(format!("|phi| = {} >= 1", phi.abs())));
        }
        if !(sigma2 > 0.0) || !(obs_var > 0.0) {
            return Err(Error::InadmissibleParameter("variances must be positive".into()));
        }
        Ok(LgssmModel {
            phi,
            sigma2,
            obs_var,
            init_var: sigma2 / (1.0 - phi * phi),
            params,
        })
    }

    pub fn with_init_var(mut self, init_var: f64) -> Self {
        self.init_var = init_var;
        self
    }

    /// `(φ, σ²)` in effect under θ.
    #[inline]
    pub fn coefficients(&self, theta: &[f64]) -> (f64, f64) {
        match self.params {
            LgssmParams::None => (self.phi, self.sigma2),
            LgssmParams::Phi => (theta[0], self.sigma2),
            LgssmParams::Sigma2 => (self.phi, theta[0]),
            LgssmParams::Both => (theta[0], theta[1]),
        }
    }

    /// Parameter vector matching the stored coefficients.
    pub fn nominal_parameter(&self) -> Vec<f64> {
        match self.params {
            LgssmParams::None => vec![],
            LgssmParams::Phi => vec![self.phi],
            LgssmParams::Sigma2 => vec![self.sigma2],
            LgssmParams::Both => vec![self.phi, self.sigma2],
        }
    }
}

impl StateSpaceModel for LgssmModel {
    type State = f64;
    type Obs = f64;

    fn param_dim(&self) -> usize {
        match self.params {
            LgssmParams::None => 0,
            LgssmParams::Phi | LgssmParams::Sigma2 => 1,
            LgssmParams::Both => 2,
        }
    }

    fn validate(&self, theta: &[f64]) -> Result<()> {
        let (phi, sigma2) = self.coefficients(theta);
        if !(phi.abs() < 1.0) {
            return Err(Error::InadmissibleParameter(format!("|phi| = {} >= 1", phi.abs())));
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InadmissibleParameter(format!("sigma2 = {sigma2}")));
        }
        Ok(())
    }

    fn project(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = theta.to_vec();
        match self.params {
            LgssmParams::None => {}
            LgssmParams::Phi => out[0] = out[0].clamp(-0.999, 0.999),
            LgssmParams::Sigma2 => out[0] = out[0].max(1e-6),
            LgssmParams::Both => {
                out[0] = out[0].clamp(-0.999, 0.999);
                out[1] = out[1].max(1e-6);
            }
        }
        out
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.init_var.sqrt() * rng.sample::<f64, _>(StandardNormal)
    }

    fn sample_transition<R: Rng + ?Sized>(&self, theta: &[f64], _t: usize, x: &f64, rng: &mut R) -> f64 {
        let (phi, sigma2) = self.coefficients(theta);
        phi * x + sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal)
    }

    fn transition_density(&self, theta: &[f64], _t: usize, x: &f64, x_next: &f64) -> f64 {
        let (phi, sigma2) = self.coefficients(theta);
        normal_pdf(*x_next, phi * x, sigma2)
    }

    fn log_transition_density(&self, theta: &[f64], _t: usize, x: &f64, x_next: &f64) -> f64 {
        let (phi, sigma2) = self.coefficients(theta);
        normal_log_pdf(*x_next, phi * x, sigma2)
    }

    fn density_bound(&self, theta: &[f64]) -> f64 {
        let (_, sigma2) = self.coefficients(theta);
        (2.0 * std::f64::consts::PI * sigma2).sqrt().recip()
    }

    fn emission_density(&self, _theta: &[f64], x: &f64, y: &f64) -> f64 {
        normal_pdf(*y, *x, self.obs_var)
    }

    fn log_emission_density(&self, _theta: &[f64], x: &f64, y: &f64) -> f64 {
        normal_log_pdf(*y, *x, self.obs_var)
    }

    fn sample_emission<R: Rng + ?Sized>(&self, _theta: &[f64], x: &f64, rng: &mut R) -> f64 {
        x + self.obs_var.sqrt() * rng.sample::<f64, _>(StandardNormal)
    }

    fn add_grad_log_emission(&self, _theta: &[f64], _x: &f64, _y: &f64, _out: &mut [f64]) -> Result<()> {
        Ok(())
    }

    fn add_grad_log_transition(
        &self,
        theta: &[f64],
        _t: usize,
        x: &f64,
        x_next: &f64,
        out: &mut [f64],
    ) -> Result<()> {
        let (phi, sigma2) = self.coefficients(theta);
        let r = x_next - phi * x;
        let d_phi = x * r / sigma2;
        let d_sigma2 = -0.5 / sigma2 + 0.5 * r * r / (sigma2 * sigma2);
        match self.params {
            LgssmParams::None => {}
            LgssmParams::Phi => out[0] += d_phi,
            LgssmParams::Sigma2 => out[0] += d_sigma2,
            LgssmParams::Both => {
                out[0] += d_phi;
                out[1] += d_sigma2;
            }
        }
        Ok(())
    }

    fn state_coords(&self, x: &f64) -> Vec<f64> {
        vec![*x]
    }
}

impl TrajectoryFormat for LgssmModel {
    fn state_fields(&self) -> Vec<String> {
        vec!["x".into()]
    }

    fn observation_fields(&self) -> Vec<String> {
        vec!["y".into()]
    }

    fn observation_records(&self, y: &f64) -> Vec<Vec<f64>> {
        vec![vec![*y]]
    }
}
