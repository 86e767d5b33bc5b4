//! Particle estimate of the tangent filter.
//!
//! The derivative of the predictor `η_t` with respect to θ is the signed
//! measure `f ↦ Cov(f(X_t), ∇θ log p(X_{0:t}, y_{0:t-1}))`. With the
//! backward statistics of the complete-data score at hand it is estimated by
//! `η̂f = N⁻¹ Σ_i (τ_t^i − τ̄_t) f(ξ_t^i)`.
//!
//! ```
//! use paris_smc::models::HmmModel;
//! use paris_smc::{tangent_init, tangent_measure, tangent_step, ParameterVector, StreamSeed, UpdateRule};
//!
//! let model = HmmModel::test_chain();
//! let theta = ParameterVector::new(vec![0.3]).unwrap();
//! let rule = UpdateRule::Paris(Default::default());
//! let mut state = tangent_init(&model, 500, StreamSeed(1)).unwrap();
//! for y in [0, 1, 1, 0] {
//!     state = tangent_step(&model, state, &y, &theta, &rule).unwrap();
//! }
//! let d = tangent_measure(&state, |&x| (x == 1) as u8 as f64);
//! assert_eq!(d.len(), 1);
//! ```

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_parameter, ParameterVector, StateSpaceModel};
use crate::rng::StreamSeed;
use crate::smc::{init_cloud, propagate_unchecked, weight_unchecked, ParticleCloud};
use crate::smoothing::{
    smoothed_estimate, update_unchecked, BackwardStatistics, ScoreFunctional, UpdateDiagnostics, UpdateRule,
};

/// Predictor cloud at time `t` with the score statistics of its particles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentState<S> {
    pub(crate) cloud: ParticleCloud<S>,
    pub(crate) stats: BackwardStatistics,
    pub(crate) tau_bar: Vec<f64>,
    pub(crate) seed: StreamSeed,
    pub(crate) last_update: UpdateDiagnostics,
}

impl<S> TangentState<S> {
    pub fn t(&self) -> usize {
        self.cloud.t()
    }

    pub fn cloud(&self) -> &ParticleCloud<S> {
        &self.cloud
    }

    pub fn stats(&self) -> &BackwardStatistics {
        &self.stats
    }

    /// Mean of the statistics, an estimate of the score `∇θ log p(y_{0:t-1})`.
    pub fn tau_bar(&self) -> &[f64] {
        &self.tau_bar
    }

    pub fn seed(&self) -> StreamSeed {
        self.seed
    }

    /// Work counters of the last statistics update.
    pub fn last_update(&self) -> UpdateDiagnostics {
        self.last_update
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }
}

/// Centered atoms `(τ^i − τ̄, ξ^i)` of the tangent estimate.
#[derive(Debug, Clone)]
pub struct TangentEstimate<'a, S> {
    pub atoms: Vec<(Vec<f64>, &'a S)>,
}

impl<S> TangentEstimate<'_, S> {
    /// `N⁻¹ Σ_i (τ^i − τ̄) f(ξ^i)`.
    pub fn apply<F: Fn(&S) -> f64>(&self, f: F) -> Vec<f64> {
        let values: Vec<f64> = self.atoms.iter().map(|(_, x)| f(x)).collect();
        centered_pairing(self.atoms.iter().map(|(v, _)| v.as_slice()), &values)
    }
}

/// `N⁻¹ Σ_i a_i (f_i − f̄)` where the `a_i` are already centered.
///
/// Subtracting `f̄` does not change the value in exact arithmetic; it keeps
/// the sum small when `f` carries a large constant part.
fn centered_pairing<'a>(atoms: impl Iterator<Item = &'a [f64]>, values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let f_bar = values.iter().sum::<f64>() / n;
    let mut out: Vec<f64> = Vec::new();
    for (a, f) in atoms.zip(values) {
        if out.is_empty() {
            out = vec![0.0; a.len()];
        }
        let c = f - f_bar;
        for (o, v) in out.iter_mut().zip(a) {
            *o += v * c;
        }
    }
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// Draws `N` particles from the initial law and sets `τ_0 = 0`.
pub fn tangent_init<M: StateSpaceModel>(model: &M, n: usize, seed: StreamSeed) -> Result<TangentState<M::State>> {
    let cloud = init_cloud(model, n, seed)?;
    let d = model.param_dim();
    Ok(TangentState {
        stats: BackwardStatistics::zeros(0, n, d),
        tau_bar: vec![0.0; d],
        cloud,
        seed,
        last_update: UpdateDiagnostics::default(),
    })
}

/// Moves a weighted cloud and its statistics from `t` to `t + 1` under θ.
/// `y` is the observation the cloud was weighted with.
pub(crate) fn advance<M: StateSpaceModel>(
    model: &M,
    weighted: &ParticleCloud<M::State>,
    stats: &BackwardStatistics,
    y: &M::Obs,
    theta: &[f64],
    rule: &UpdateRule,
    seed: StreamSeed,
) -> Result<(ParticleCloud<M::State>, BackwardStatistics, UpdateDiagnostics)> {
    let next = propagate_unchecked(model, weighted, theta, seed)?;
    let h = ScoreFunctional {
        model,
        theta,
        t: weighted.t(),
        y,
    };
    let (stats, diag) = update_unchecked(model, rule, stats, weighted, &next, &h, theta, seed)?;
    Ok((next, stats, diag))
}

/// One step of the tangent filter: weight the time-`t` cloud with `y_t`,
/// select and mutate, then update the score statistics.
pub fn tangent_step<M: StateSpaceModel>(
    model: &M,
    state: TangentState<M::State>,
    y: &M::Obs,
    theta: &ParameterVector,
    rule: &UpdateRule,
) -> Result<TangentState<M::State>> {
    check_parameter(model, theta)?;
    rule.validate()?;
    let TangentState {
        cloud, stats, seed, ..
    } = state;
    let t = cloud.t();
    let weighted = weight_unchecked(model, cloud, y, theta);
    if weighted.weight_sum() <= 0.0 {
        return Err(Error::Collapsed { t });
    }
    let (cloud, stats, last_update) = advance(model, &weighted, &stats, y, theta, rule, seed)?;
    let tau_bar = smoothed_estimate(&stats);
    Ok(TangentState {
        cloud,
        stats,
        tau_bar,
        seed,
        last_update,
    })
}

/// The centered signed-measure representation of the current estimate.
pub fn tangent_estimate<S>(state: &TangentState<S>) -> TangentEstimate<'_, S> {
    let atoms = state
        .stats
        .rows()
        .zip(state.cloud.particles())
        .map(|(r, x)| (r.iter().zip(&state.tau_bar).map(|(v, m)| v - m).collect(), x))
        .collect();
    TangentEstimate { atoms }
}

/// `η̂f = N⁻¹ Σ_i (τ^i − τ̄) f(ξ^i)`.
pub fn tangent_measure<S, F: Fn(&S) -> f64>(state: &TangentState<S>, f: F) -> Vec<f64> {
    let values: Vec<f64> = state.cloud.particles().iter().map(f).collect();
    let d = state.tau_bar.len();
    let mut out = vec![0.0; d];
    let n = values.len() as f64;
    let f_bar = values.iter().sum::<f64>() / n;
    for (r, f) in state.stats.rows().zip(&values) {
        let c = f - f_bar;
        for ((o, v), m) in out.iter_mut().zip(r).zip(&state.tau_bar) {
            *o += (v - m) * c;
        }
    }
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// A named test function for streaming output.
pub struct TestFunction<S> {
    pub name: String,
    pub f: Box<dyn Fn(&S) -> f64 + Send + Sync>,
}

impl<S> TestFunction<S> {
    pub fn new(name: impl Into<String>, f: impl Fn(&S) -> f64 + Send + Sync + 'static) -> Self {
        TestFunction {
            name: name.into(),
            f: Box::new(f),
        }
    }
}

/// Writes one CSV row per step: `t`, the components of `τ̄`, and the tangent
/// measure of every configured test function.
pub struct TangentCsv<W: Write, S> {
    out: W,
    functions: Vec<TestFunction<S>>,
}

impl<W: Write, S> TangentCsv<W, S> {
    pub fn new(mut out: W, dim: usize, functions: Vec<TestFunction<S>>) -> std::io::Result<Self> {
        let mut header = vec!["t".to_string()];
        header.extend((0..dim).map(|k| format!("tau_bar_{k}")));
        for f in &functions {
            header.extend((0..dim).map(|k| format!("{}_{k}", f.name)));
        }
        writeln!(out, "{}", header.join(","))?;
        Ok(TangentCsv { out, functions })
    }

    pub fn record(&mut self, state: &TangentState<S>) -> std::io::Result<()> {
        let mut row = vec![state.t().to_string()];
        row.extend(state.tau_bar.iter().map(|v| format!("{v:?}")));
        for f in &self.functions {
            row.extend(tangent_measure(state, &f.f).iter().map(|v| format!("{v:?}")));
        }
        writeln!(self.out, "{}", row.join(","))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
