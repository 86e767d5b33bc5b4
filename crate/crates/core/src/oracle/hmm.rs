use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_parameter, ParameterVector};
use crate::models::HmmModel;

/// Exact predictor of a finite HMM at time `t` and its θ-derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmExactState {
    /// `π_t(j) = P(X_t = j | y_{0:t-1})`.
    pub predictor: Vec<f64>,
    /// `tangent[k][j] = ∂π_t(j) / ∂θ_k`.
    pub tangent: Vec<Vec<f64>>,
    /// `log p(y_{0:t-1})`.
    pub log_likelihood: f64,
    /// `∇θ log p(y_{0:t-1})`.
    pub score: Vec<f64>,
    /// `∇θ log p(y_{t-1} | y_{0:t-2})`; zero at `t = 0`.
    pub step_score: Vec<f64>,
}

/// Normalized forward recursion with its sensitivity equations.
///
/// Returns the predictors for `t = 0, …, T + 1` given `y_{0:T}`.
pub fn hmm_forward(model: &HmmModel, theta: &ParameterVector, ys: &[usize]) -> Result<Vec<HmmExactState>> {
    check_parameter(model, theta)?;
    let m = model.states();
    let d = theta.dim();
    if let Some(&y) = ys.iter().find(|&&y| y >= model.symbols()) {
        return Err(Error::Dimension(format!("symbol {y} out of range")));
    }
    let mut pi = model.initial().to_vec();
    let mut dpi = vec![vec![0.0; m]; d];
    let mut ll = 0.0;
    let mut score = vec![0.0; d];
    let mut out = Vec::with_capacity(ys.len() + 1);
    out.push(HmmExactState {
        predictor: pi.clone(),
        tangent: dpi.clone(),
        log_likelihood: 0.0,
        score: score.clone(),
        step_score: vec![0.0; d],
    });
    for (t, &y) in ys.iter().enumerate() {
        let u: Vec<f64> = (0..m).map(|i| pi[i] * model.g(theta, i, y)).collect();
        let c: f64 = u.iter().sum();
        if !(c > 0.0) {
            return Err(Error::ZeroLikelihood { t });
        }
        let du: Vec<Vec<f64>> = (0..d)
            .map(|k| (0..m).map(|i| dpi[k][i] * model.g(theta, i, y) + pi[i] * model.dg(k, i, y)).collect())
            .collect();
        let dc: Vec<f64> = du.iter().map(|r| r.iter().sum()).collect();
        let next: Vec<f64> = (0..m)
            .map(|j| (0..m).map(|i| u[i] * model.q(theta, i, j)).sum::<f64>() / c)
            .collect();
        let dnext: Vec<Vec<f64>> = (0..d)
            .map(|k| {
                (0..m)
                    .map(|j| {
                        let dv: f64 = (0..m)
                            .map(|i| du[k][i] * model.q(theta, i, j) + u[i] * model.dq(k, i, j))
                            .sum();
                        (dv - next[j] * dc[k]) / c
                    })
                    .collect()
            })
            .collect();
        ll += c.ln();
        let step: Vec<f64> = dc.iter().map(|v| v / c).collect();
        score.iter_mut().zip(&step).for_each(|(s, v)| *s += v);
        pi = next;
        dpi = dnext;
        out.push(HmmExactState {
            predictor: pi.clone(),
            tangent: dpi.clone(),
            log_likelihood: ll,
            score: score.clone(),
            step_score: step,
        });
    }
    Ok(out)
}

/// Exact tangent filters `∂π_t / ∂θ` for `t = 0, …, T + 1`.
pub fn hmm_tangent_exact(model: &HmmModel, theta: &ParameterVector, ys: &[usize]) -> Result<Vec<Vec<Vec<f64>>>> {
    Ok(hmm_forward(model, theta, ys)?.into_iter().map(|s| s.tangent).collect())
}

/// `h̃_t(i, j) = ∇θ log G(i, y_t) + ∇θ log Q(i, j)`.
pub fn hmm_score_increment(model: &HmmModel, theta: &[f64], i: usize, j: usize, y: usize) -> Vec<f64> {
    let g = model.g(theta, i, y);
    let q = model.q(theta, i, j);
    (0..theta.len()).map(|k| model.dg(k, i, y) / g + model.dq(k, i, j) / q).collect()
}

/// Exact backward statistics of an additive functional.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmSmoothed {
    /// `stats[j] = E[h_t | X_t = j, y_{0:t-1}]`.
    pub stats: Vec<Vec<f64>>,
    /// `Σ_j π_t(j) stats[j]`, the expectation of `h_t` under the predictor.
    pub estimate: Vec<f64>,
}

/// Runs `T_{t+1}(j) = Σ_i B_t(j, i) (T_t(i) + h̃_t(i, j))` with the exact
/// backward kernel `B_t(j, i) ∝ φ_t(i) Q(i, j)`, for `t = 0, …, T + 1`.
///
/// `h(t, i, j, out)` adds `h̃_t(i, j)` to `out`.
pub fn hmm_smoothed_exact<H>(
    model: &HmmModel,
    theta: &ParameterVector,
    ys: &[usize],
    dim: usize,
    h: H,
) -> Result<Vec<HmmSmoothed>>
where
    H: Fn(usize, usize, usize, &mut [f64]),
{
    let forward = hmm_forward(model, theta, ys)?;
    let m = model.states();
    let mut stats = vec![vec![0.0; dim]; m];
    let mut out = Vec::with_capacity(forward.len());
    let summarize = |stats: &Vec<Vec<f64>>, pi: &[f64]| {
        let mut e = vec![0.0; dim];
        for (s, p) in stats.iter().zip(pi) {
            e.iter_mut().zip(s).for_each(|(a, v)| *a += p * v);
        }
        HmmSmoothed {
            stats: stats.clone(),
            estimate: e,
        }
    };
    out.push(summarize(&stats, &forward[0].predictor));
    for (t, &y) in ys.iter().enumerate() {
        let pi = &forward[t].predictor;
        let filt: Vec<f64> = (0..m).map(|i| pi[i] * model.g(theta, i, y)).collect();
        let mut next = vec![vec![0.0; dim]; m];
        let mut term = vec![0.0; dim];
        for (j, row) in next.iter_mut().enumerate() {
            let norm: f64 = (0..m).map(|i| filt[i] * model.q(theta, i, j)).sum();
            if !(norm > 0.0) {
                return Err(Error::ZeroLikelihood { t });
            }
            for i in 0..m {
                let b = filt[i] * model.q(theta, i, j) / norm;
                if b == 0.0 {
                    continue;
                }
                term.copy_from_slice(&stats[i]);
                h(t, i, j, &mut term);
                row.iter_mut().zip(&term).for_each(|(a, v)| *a += b * v);
            }
        }
        stats = next;
        out.push(summarize(&stats, &forward[t + 1].predictor));
    }
    Ok(out)
}
