//! Online backward statistics for additive functionals.
//!
//! Each particle `ξ_t^i` carries a statistic `τ_t^i ∈ R^d` approximating the
//! conditional expectation of the additive functional
//! `h_t = Σ_{s<t} h̃_s(x_s, x_{s+1})` given `X_t = ξ_t^i`. Two updates move
//! the statistics from `t` to `t + 1`:
//!
//! * [`ffbsm_update`] averages over all `N` ancestors with the exact backward
//!   weights `ω_t^j q(ξ_t^j, ξ_{t+1}^i)`. It costs `O(N²)` per step.
//! * [`paris_update`] replaces that sum by `K̃` i.i.d. draws from the same
//!   backward law. The draws are made by accept-reject against the filter
//!   weights, so the expected cost is `O(N K̃)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_parameter, ParameterVector, StateSpaceModel};
use crate::rng::{Purpose, StreamSeed};
use crate::smc::{CategoricalSampler, ParticleCloud, PAR_MIN_LEN};

/// Per-particle statistics `τ_t^i`, stored row-major as `N × d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardStatistics {
    t: usize,
    dim: usize,
    n: usize,
    stats: Vec<f64>,
}

impl BackwardStatistics {
    /// All-zero statistics, the initial condition `τ_0^i = 0`.
    pub fn zeros(t: usize, n: usize, dim: usize) -> Self {
        BackwardStatistics {
            t,
            dim,
            n,
            stats: vec![0.0; n * dim],
        }
    }

    /// Builds statistics from one row per particle.
    pub fn from_rows(t: usize, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Dimension("statistics need at least one row".into()));
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("ragged statistics rows".into()));
        }
        Ok(BackwardStatistics {
            t,
            dim,
            n: rows.len(),
            stats: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.stats[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n).map(move |i| self.row(i))
    }

    /// Flat row-major view.
    pub fn as_flat(&self) -> &[f64] {
        &self.stats
    }

    fn check_matches<S>(&self, cloud: &ParticleCloud<S>) -> Result<()> {
        if self.n != cloud.len() || self.t != cloud.t() {
            return Err(Error::Dimension(format!(
                "statistics (t = {}, N = {}) do not match the cloud (t = {}, N = {})",
                self.t,
                self.n,
                cloud.t(),
                cloud.len()
            )));
        }
        Ok(())
    }
}

/// `N⁻¹ Σ_i τ^i`, summed in index order.
pub fn smoothed_estimate(stats: &BackwardStatistics) -> Vec<f64> {
    let mut out = vec![0.0; stats.dim];
    for r in stats.rows() {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    let n = stats.n as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackwardSamplerConfig {
    /// Number of backward draws `K̃` per particle.
    pub precision: usize,
    /// Rejections tolerated before switching to exact categorical sampling.
    pub max_trials: usize,
}

impl Default for BackwardSamplerConfig {
    fn default() -> Self {
        BackwardSamplerConfig {
            precision: 2,
            max_trials: 100,
        }
    }
}

impl BackwardSamplerConfig {
    pub fn new(precision: usize) -> Self {
        BackwardSamplerConfig {
            precision,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.precision == 0 {
            return Err(Error::Config("precision must be at least 1".into()));
        }
        if self.max_trials == 0 {
            return Err(Error::Config("max_trials must be at least 1".into()));
        }
        Ok(())
    }
}

/// How backward statistics are propagated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum UpdateRule {
    Paris(BackwardSamplerConfig),
    Ffbsm,
}

impl UpdateRule {
    pub fn validate(&self) -> Result<()> {
        match self {
            UpdateRule::Paris(c) => c.validate(),
            UpdateRule::Ffbsm => Ok(()),
        }
    }
}

/// The increment `h̃_t(x, x')` of an additive functional at one time step.
pub trait AdditiveFunctional<S>: Sync {
    fn dim(&self) -> usize;

    /// `out += h̃_t(x, x')`.
    fn add_increment(&self, x: &S, x_next: &S, out: &mut [f64]) -> Result<()>;
}

/// Wraps a closure `(x, x', out)` as an additive functional.
pub struct FnFunctional<F> {
    dim: usize,
    f: F,
}

impl<F> FnFunctional<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnFunctional { dim, f }
    }
}

impl<S, F> AdditiveFunctional<S> for FnFunctional<F>
where
    F: Fn(&S, &S, &mut [f64]) -> Result<()> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn add_increment(&self, x: &S, x_next: &S, out: &mut [f64]) -> Result<()> {
        (self.f)(x, x_next, out)
    }
}

/// The complete-data score increment at time `t`, with `y` the observation
/// at time `t`.
pub struct ScoreFunctional<'a, M: StateSpaceModel> {
    pub model: &'a M,
    pub theta: &'a [f64],
    pub t: usize,
    pub y: &'a M::Obs,
}

impl<M: StateSpaceModel> AdditiveFunctional<M::State> for ScoreFunctional<'_, M> {
    fn dim(&self) -> usize {
        self.model.param_dim()
    }

    fn add_increment(&self, x: &M::State, x_next: &M::State, out: &mut [f64]) -> Result<()> {
        self.model.add_score_increment(self.theta, self.t, x, x_next, self.y, out)
    }
}

/// Accept-reject sampler for the backward law
/// `Pr({ω_t^ℓ q(ξ_t^ℓ, x')})` of a weighted cloud.
pub struct BackwardSampler<'a, M: StateSpaceModel> {
    model: &'a M,
    cloud: &'a ParticleCloud<M::State>,
    weights: &'a [f64],
    theta: &'a [f64],
    proposal: CategoricalSampler,
    bound: f64,
    max_trials: usize,
}

/// Outcome of a single backward draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardDraw {
    pub index: usize,
    /// Candidates proposed by accept-reject (including the accepted one).
    pub trials: usize,
    pub fell_back: bool,
}

/// Exact backward law of one child, used after accept-reject gives up.
struct ExactBackward {
    sampler: CategoricalSampler,
}

impl<'a, M: StateSpaceModel> BackwardSampler<'a, M> {
    pub fn new(
        model: &'a M,
        cloud: &'a ParticleCloud<M::State>,
        theta: &'a ParameterVector,
        max_trials: usize,
    ) -> Result<Self> {
        check_parameter(model, theta)?;
        Self::unchecked(model, cloud, theta, max_trials)
    }

    fn unchecked(
        model: &'a M,
        cloud: &'a ParticleCloud<M::State>,
        theta: &'a [f64],
        max_trials: usize,
    ) -> Result<Self> {
        let weights = cloud.require_weights()?;
        let proposal = CategoricalSampler::new(weights).map_err(|_| Error::Collapsed { t: cloud.t() })?;
        let bound = model.density_bound(theta);
        if !(bound > 0.0) || !bound.is_finite() {
            return Err(Error::Config(format!("density bound {bound} is not positive and finite")));
        }
        Ok(BackwardSampler {
            model,
            cloud,
            weights,
            theta,
            proposal,
            bound,
            max_trials: max_trials.max(1),
        })
    }

    fn exact(&self, child: &M::State, child_index: usize) -> Result<ExactBackward> {
        let t = self.cloud.t();
        let w: Vec<f64> = self
            .cloud
            .particles()
            .iter()
            .zip(self.weights)
            .map(|(x, w)| if *w > 0.0 { w * self.model.transition_density(self.theta, t, x, child) } else { 0.0 })
            .collect();
        let sampler = CategoricalSampler::new(&w).map_err(|_| Error::AllZeroBackwardWeights {
            t,
            child: child_index,
        })?;
        Ok(ExactBackward { sampler })
    }

    fn accept_reject<R: Rng + ?Sized>(&self, child: &M::State, rng: &mut R) -> (Option<usize>, usize) {
        let t = self.cloud.t();
        for trial in 1..=self.max_trials {
            let j = self.proposal.sample(rng);
            let q = self.model.transition_density(self.theta, t, &self.cloud.particles()[j], child);
            let u: f64 = rng.random();
            if u * self.bound < q {
                return (Some(j), trial);
            }
        }
        (None, self.max_trials)
    }

    /// One draw from the backward law of `child`.
    pub fn draw<R: Rng + ?Sized>(&self, child: &M::State, child_index: usize, rng: &mut R) -> Result<BackwardDraw> {
        match self.accept_reject(child, rng) {
            (Some(index), trials) => Ok(BackwardDraw {
                index,
                trials,
                fell_back: false,
            }),
            (None, trials) => {
                let exact = self.exact(child, child_index)?;
                Ok(BackwardDraw {
                    index: exact.sampler.sample(rng),
                    trials,
                    fell_back: true,
                })
            }
        }
    }

    /// `k` i.i.d. draws for one child. Once accept-reject has given up for
    /// this child, the remaining draws reuse the exact normalization.
    fn draw_many<R: Rng + ?Sized>(
        &self,
        child: &M::State,
        child_index: usize,
        k: usize,
        rng: &mut R,
        out: &mut Vec<usize>,
        diag: &mut UpdateDiagnostics,
    ) -> Result<()> {
        let mut exact: Option<ExactBackward> = None;
        for _ in 0..k {
            if let Some(e) = &exact {
                out.push(e.sampler.sample(rng));
                continue;
            }
            let (hit, trials) = self.accept_reject(child, rng);
            diag.trials += trials;
            match hit {
                Some(j) => out.push(j),
                None => {
                    diag.fallbacks += 1;
                    let e = self.exact(child, child_index)?;
                    out.push(e.sampler.sample(rng));
                    exact = Some(e);
                }
            }
        }
        diag.draws += k;
        Ok(())
    }
}

/// Draws one backward index for `child` from the weighted cloud.
pub fn backward_index<M: StateSpaceModel, R: Rng + ?Sized>(
    model: &M,
    prev_cloud: &ParticleCloud<M::State>,
    child: &M::State,
    theta: &ParameterVector,
    config: &BackwardSamplerConfig,
    rng: &mut R,
) -> Result<BackwardDraw> {
    config.validate()?;
    BackwardSampler::new(model, prev_cloud, theta, config.max_trials)?.draw(child, 0, rng)
}

/// Work counters of one statistics update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    /// Backward indices drawn.
    pub draws: usize,
    /// Accept-reject candidates proposed.
    pub trials: usize,
    /// Children that needed the exact fallback.
    pub fallbacks: usize,
    /// Transition-density evaluations of the exact sum.
    pub exact_evaluations: usize,
}

impl UpdateDiagnostics {
    fn merge(mut self, other: UpdateDiagnostics) -> Self {
        self.draws += other.draws;
        self.trials += other.trials;
        self.fallbacks += other.fallbacks;
        self.exact_evaluations += other.exact_evaluations;
        self
    }
}

fn check_inputs<S, H: AdditiveFunctional<S>>(
    stats: &BackwardStatistics,
    prev: &ParticleCloud<S>,
    next: &ParticleCloud<S>,
    h: &H,
) -> Result<()> {
    stats.check_matches(prev)?;
    if h.dim() != stats.dim {
        return Err(Error::Dimension(format!(
            "functional has dimension {} but the statistics have {}",
            h.dim(),
            stats.dim
        )));
    }
    if next.t() != prev.t() + 1 {
        return Err(Error::Dimension(format!(
            "new cloud is at time {} but the previous one is at {}",
            next.t(),
            prev.t()
        )));
    }
    Ok(())
}

/// `τ_{t+1}^i = K̃⁻¹ Σ_j (τ_t^{J_ij} + h̃_t(ξ_t^{J_ij}, ξ_{t+1}^i))`.
///
/// Child `i` takes its backward draws from the substream `(seed, t, i)`.
#[allow(clippy::too_many_arguments)]
pub fn paris_update<M: StateSpaceModel, H: AdditiveFunctional<M::State>>(
    model: &M,
    stats: &BackwardStatistics,
    prev_cloud: &ParticleCloud<M::State>,
    new_cloud: &ParticleCloud<M::State>,
    h: &H,
    theta: &ParameterVector,
    config: &BackwardSamplerConfig,
    seed: StreamSeed,
) -> Result<(BackwardStatistics, UpdateDiagnostics)> {
    check_parameter(model, theta)?;
    config.validate()?;
    check_inputs(stats, prev_cloud, new_cloud, h)?;
    paris_unchecked(model, stats, prev_cloud, new_cloud, h, theta, config, seed)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn paris_unchecked<M: StateSpaceModel, H: AdditiveFunctional<M::State>>(
    model: &M,
    stats: &BackwardStatistics,
    prev_cloud: &ParticleCloud<M::State>,
    new_cloud: &ParticleCloud<M::State>,
    h: &H,
    theta: &[f64],
    config: &BackwardSamplerConfig,
    seed: StreamSeed,
) -> Result<(BackwardStatistics, UpdateDiagnostics)> {
    let sampler = BackwardSampler::unchecked(model, prev_cloud, theta, config.max_trials)?;
    let d = stats.dim;
    let k = config.precision;
    let t = prev_cloud.t();
    let prev = prev_cloud.particles();
    let rows: Vec<(Vec<f64>, UpdateDiagnostics)> = new_cloud
        .particles()
        .par_iter()
        .enumerate()
        .with_min_len(PAR_MIN_LEN)
        .map(|(i, child)| {
            let mut rng = seed.substream(t as u64, i as u64, Purpose::Backward);
            let mut diag = UpdateDiagnostics::default();
            let mut idx = Vec::with_capacity(k);
            sampler.draw_many(child, i, k, &mut rng, &mut idx, &mut diag)?;
            let mut acc = vec![0.0; d];
            for &j in &idx {
                for (a, s) in acc.iter_mut().zip(stats.row(j)) {
                    *a += s;
                }
                h.add_increment(&prev[j], child, &mut acc)?;
            }
            let kf = k as f64;
            acc.iter_mut().for_each(|v| *v /= kf);
            Ok((acc, diag))
        })
        .collect::<Result<_>>()?;
    Ok(assemble(t + 1, d, rows))
}

fn assemble(t: usize, dim: usize, rows: Vec<(Vec<f64>, UpdateDiagnostics)>) -> (BackwardStatistics, UpdateDiagnostics) {
    let n = rows.len();
    let mut flat = Vec::with_capacity(n * dim);
    let mut diag = UpdateDiagnostics::default();
    for (r, dg) in rows {
        flat.extend_from_slice(&r);
        diag = diag.merge(dg);
    }
    (
        BackwardStatistics {
            t,
            dim,
            n,
            stats: flat,
        },
        diag,
    )
}

/// `τ_{t+1}^i = Σ_j ω_t^j q(ξ_t^j, ξ_{t+1}^i) (τ_t^j + h̃_t(ξ_t^j, ξ_{t+1}^i)) / Σ_ℓ ω_t^ℓ q(ξ_t^ℓ, ξ_{t+1}^i)`.
pub fn ffbsm_update<M: StateSpaceModel, H: AdditiveFunctional<M::State>>(
    model: &M,
    stats: &BackwardStatistics,
    prev_cloud: &ParticleCloud<M::State>,
    new_cloud: &ParticleCloud<M::State>,
    h: &H,
    theta: &ParameterVector,
) -> Result<(BackwardStatistics, UpdateDiagnostics)> {
    check_parameter(model, theta)?;
    check_inputs(stats, prev_cloud, new_cloud, h)?;
    ffbsm_unchecked(model, stats, prev_cloud, new_cloud, h, theta)
}

pub(crate) fn ffbsm_unchecked<M: StateSpaceModel, H: AdditiveFunctional<M::State>>(
    model: &M,
    stats: &BackwardStatistics,
    prev_cloud: &ParticleCloud<M::State>,
    new_cloud: &ParticleCloud<M::State>,
    h: &H,
    theta: &[f64],
) -> Result<(BackwardStatistics, UpdateDiagnostics)> {
    let weights = prev_cloud.require_weights()?;
    let d = stats.dim;
    let t = prev_cloud.t();
    let prev = prev_cloud.particles();
    let rows: Vec<(Vec<f64>, UpdateDiagnostics)> = new_cloud
        .particles()
        .par_iter()
        .enumerate()
        .with_min_len(PAR_MIN_LEN.min(16))
        .map(|(i, child)| {
            let mut acc = vec![0.0; d];
            let mut norm = 0.0;
            let mut term = vec![0.0; d];
            let mut evaluations = 0;
            for (j, x) in prev.iter().enumerate() {
                if weights[j] <= 0.0 {
                    continue;
                }
                evaluations += 1;
                let b = weights[j] * model.transition_density(theta, t, x, child);
                if b <= 0.0 {
                    continue;
                }
                term.copy_from_slice(stats.row(j));
                h.add_increment(x, child, &mut term)?;
                for (a, v) in acc.iter_mut().zip(&term) {
                    *a += b * v;
                }
                norm += b;
            }
            if !(norm > 0.0) {
                return Err(Error::AllZeroBackwardWeights { t, child: i });
            }
            acc.iter_mut().for_each(|v| *v /= norm);
            let diag = UpdateDiagnostics {
                exact_evaluations: evaluations,
                ..Default::default()
            };
            Ok((acc, diag))
        })
        .collect::<Result<_>>()?;
    Ok(assemble(t + 1, d, rows))
}

/// Dispatches on the update rule.
#[allow(clippy::too_many_arguments)]
pub(crate) fn update_unchecked<M: StateSpaceModel, H: AdditiveFunctional<M::State>>(
    model: &M,
    rule: &UpdateRule,
    stats: &BackwardStatistics,
    prev_cloud: &ParticleCloud<M::State>,
    new_cloud: &ParticleCloud<M::State>,
    h: &H,
    theta: &[f64],
    seed: StreamSeed,
) -> Result<(BackwardStatistics, UpdateDiagnostics)> {
    match rule {
        UpdateRule::Paris(cfg) => paris_unchecked(model, stats, prev_cloud, new_cloud, h, theta, cfg, seed),
        UpdateRule::Ffbsm => ffbsm_unchecked(model, stats, prev_cloud, new_cloud, h, theta),
    }
}
