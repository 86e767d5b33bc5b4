use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{normal_log_pdf, normal_pdf, TrajectoryFormat, LN_2PI};
use crate::error::{Error, Result};
use crate::model::StateSpaceModel;

/// Hull-White stochastic volatility,
/// `X_{t+1} = φ X_t + σ V_{t+1}`, `Y_t = β exp(X_t / 2) U_t`,
/// with θ = (φ, σ², β²) and `X_0 ~ N(0, init_var)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvModel {
    pub init_var: f64,
}

impl Default for SvModel {
    /// Initial variance equal to the stationary variance at θ = (0.8, 0.1, 1).
    fn default() -> Self {
        SvModel {
            init_var: 0.1 / (1.0 - 0.64),
        }
    }
}

pub(crate) const SV_PHI_MAX: f64 = 0.999;
pub(crate) const SV_VAR_MIN: f64 = 1e-6;

impl StateSpaceModel for SvModel {
    type State = f64;
    type Obs = f64;

    fn param_dim(&self) -> usize {
        3
    }

    fn validate(&self, theta: &[f64]) -> Result<()> {
        let [phi, sigma2, beta2] = [theta[0], theta[1], theta[2]];
        if !(phi.abs() < 1.0) {
            return Err(Error::InadmissibleParameter(format!("|phi| = {} >= 1", phi.abs())));
        }
        if !(sigma2 > 0.0) || !(beta2 > 0.0) {
            return Err(Error::InadmissibleParameter(format!(
                "variances must be positive (sigma2 = {sigma2}, beta2 = {beta2})"
            )));
        }
        Ok(())
    }

    fn project(&self, theta: &[f64]) -> Vec<f64> {
        vec![
            theta[0].clamp(-SV_PHI_MAX, SV_PHI_MAX),
            theta[1].max(SV_VAR_MIN),
            theta[2].max(SV_VAR_MIN),
        ]
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.init_var.sqrt() * rng.sample::<f64, _>(StandardNormal)
    }

    fn sample_transition<R: Rng + ?Sized>(&self, theta: &[f64], _t: usize, x: &f64, rng: &mut R) -> f64 {
        theta[0] * x + theta[1].sqrt() * rng.sample::<f64, _>(StandardNormal)
    }

    fn transition_density(&self, theta: &[f64], _t: usize, x: &f64, x_next: &f64) -> f64 {
        normal_pdf(*x_next, theta[0] * x, theta[1])
    }

    fn log_transition_density(&self, theta: &[f64], _t: usize, x: &f64, x_next: &f64) -> f64 {
        normal_log_pdf(*x_next, theta[0] * x, theta[1])
    }

    fn density_bound(&self, theta: &[f64]) -> f64 {
        (2.0 * std::f64::consts::PI * theta[1]).sqrt().recip()
    }

    fn emission_density(&self, theta: &[f64], x: &f64, y: &f64) -> f64 {
        normal_pdf(*y, 0.0, theta[2] * x.exp())
    }

    fn log_emission_density(&self, theta: &[f64], x: &f64, y: &f64) -> f64 {
        // Kept in log form so that extreme states do not overflow `exp(x)`.
        -0.5 * (LN_2PI + theta[2].ln() + x + y * y * (-x).exp() / theta[2])
    }

    fn sample_emission<R: Rng + ?Sized>(&self, theta: &[f64], x: &f64, rng: &mut R) -> f64 {
        (theta[2] * x.exp()).sqrt() * rng.sample::<f64, _>(StandardNormal)
    }

    fn add_grad_log_emission(&self, theta: &[f64], x: &f64, y: &f64, out: &mut [f64]) -> Result<()> {
        let beta2 = theta[2];
        out[2] += -0.5 / beta2 + 0.5 * y * y * (-x).exp() / (beta2 * beta2);
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
        let (phi, sigma2) = (theta[0], theta[1]);
        let r = x_next - phi * x;
        out[0] += x * r / sigma2;
        out[1] += -0.5 / sigma2 + 0.5 * r * r / (sigma2 * sigma2);
        Ok(())
    }

    fn state_coords(&self, x: &f64) -> Vec<f64> {
        vec![*x]
    }
}

impl TrajectoryFormat for SvModel {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{emission_grad, transition_density, ParameterVector};
    use crate::models::simulate;
    use crate::rng::StreamSeed;

    #[test]
    fn transition_peak_at_conditional_mean() {
        let m = SvModel::default();
        let theta = ParameterVector::new(vec![0.8, 0.1, 1.0]).unwrap();
        let q = transition_density(&m, &theta, 0, &1.0, &0.8).unwrap();
        let expected = (2.0 * std::f64::consts::PI * 0.1).powf(-0.5);
        assert!((q - expected).abs() < 1e-14);
    }

    #[test]
    fn emission_grad_touches_only_beta2() {
        let m = SvModel::default();
        let theta = ParameterVector::new(vec![0.8, 0.1, 1.0]).unwrap();
        let g = emission_grad(&m, &theta, &0.3, &0.7).unwrap();
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 0.0);
        assert!(g[2] != 0.0);
    }

    #[test]
    fn projection_clamps_into_the_box() {
        let m = SvModel::default();
        assert_eq!(m.project(&[0.5, 0.2, 1.0]), vec![0.5, 0.2, 1.0]);
        assert_eq!(m.project(&[0.5, -0.01, 1.0])[1], 1e-6);
        assert_eq!(m.project(&[1.5, 0.1, 1.0])[0], 0.999);
    }

    #[test]
    fn second_moment_of_observations() {
        // E[Y²] = β² E[exp X] = β² exp(σ² / (2(1 − φ²))) under stationarity.
        let theta = vec![0.8, 0.1, 1.0];
        let m = SvModel::default();
        let traj = simulate(&m, &ParameterVector::new(theta.clone()).unwrap(), 100_000, StreamSeed(11)).unwrap();
        let m2 = traj.observations.iter().map(|y| y * y).sum::<f64>() / traj.observations.len() as f64;
        let expected = theta[2] * (theta[1] / (2.0 * (1.0 - theta[0] * theta[0]))).exp();
        assert!((m2 / expected - 1.0).abs() < 0.05, "{m2} vs {expected}");
    }
}
