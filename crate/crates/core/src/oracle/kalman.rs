use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{check_parameter, ParameterVector};
use crate::models::LgssmModel;

/// One-step predictor of the linear-Gaussian model at time `t`, with the
/// log-likelihood of `y_{0:t-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanState {
    pub pred_mean: f64,
    pub pred_var: f64,
    pub log_likelihood: f64,
}

/// Predictors for `t = 0, …, T + 1` given `y_{0:T}`.
pub fn kalman_filter(model: &LgssmModel, theta: &ParameterVector, ys: &[f64]) -> Result<Vec<KalmanState>> {
    check_parameter(model, theta)?;
    let (phi, sigma2) = model.coefficients(theta);
    let r = model.obs_var;
    let mut out = Vec::with_capacity(ys.len() + 1);
    let mut s = KalmanState {
        pred_mean: 0.0,
        pred_var: model.init_var,
        log_likelihood: 0.0,
    };
    out.push(s);
    for &y in ys {
        let innov_var = s.pred_var + r;
        let innov = y - s.pred_mean;
        let gain = s.pred_var / innov_var;
        let filt_mean = s.pred_mean + gain * innov;
        let filt_var = s.pred_var * r / innov_var;
        let ll = -0.5 * ((2.0 * std::f64::consts::PI * innov_var).ln() + innov * innov / innov_var);
        s = KalmanState {
            pred_mean: phi * filt_mean,
            pred_var: phi * phi * filt_var + sigma2,
            log_likelihood: s.log_likelihood + ll,
        };
        out.push(s);
    }
    Ok(out)
}
