//! Online recursive maximum likelihood.
//!
//! Each step moves the particle cloud and the score statistics forward under
//! the current parameter `θ_t`, estimates the gradient of the one-step
//! predictive log-likelihood of the new observation,
//!
//! `ζ̂ = (ζ̂¹ + ζ̂²) / ζ̂³` with `ζ̂¹ = N⁻¹ Σ ∇θ g(ξ^i, y)`,
//! `ζ̂² = N⁻¹ Σ (τ^i − τ̄) g(ξ^i, y)`, `ζ̂³ = N⁻¹ Σ g(ξ^i, y)`,
//!
//! and takes a Robbins-Monro step `θ_{t+1} = Π(θ_t + γ_{t+1} ζ̂)`.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_parameter, ParameterVector, StateSpaceModel};
use crate::rng::StreamSeed;
use crate::smc::{init_cloud, weight_unchecked, ParticleCloud};
use crate::smoothing::{smoothed_estimate, BackwardStatistics, UpdateDiagnostics, UpdateRule};
use crate::tangent::{advance, TangentState};

/// `γ_t = a t^{−κ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub scale: f64,
    pub exponent: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            scale: 1.0,
            exponent: 0.6,
        }
    }
}

impl StepSchedule {
    pub fn new(scale: f64, exponent: f64) -> Result<Self> {
        let s = StepSchedule { scale, exponent };
        s.validate()?;
        Ok(s)
    }

    /// The frozen schedule `γ ≡ 0`.
    pub fn frozen() -> Self {
        StepSchedule {
            scale: 0.0,
            exponent: 1.0,
        }
    }

    /// `scale` may be zero (frozen parameter); the exponent must lie in `(1/2, 1]`.
    pub fn validate(&self) -> Result<()> {
        if !(self.scale >= 0.0) || !self.scale.is_finite() {
            return Err(Error::Config(format!("step scale {} must be non-negative", self.scale)));
        }
        if !(self.exponent > 0.5 && self.exponent <= 1.0) {
            return Err(Error::Config(format!("step exponent {} is outside (0.5, 1]", self.exponent)));
        }
        Ok(())
    }
}

/// `a t^{−κ}` for `t ≥ 1`; `t = 0` is treated as `t = 1`.
pub fn step_size(schedule: &StepSchedule, t: usize) -> f64 {
    schedule.scale * (t.max(1) as f64).powf(-schedule.exponent)
}

/// Particle estimates of the three ζ-terms on the natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaTriple {
    pub zeta1: Vec<f64>,
    pub zeta2: Vec<f64>,
    pub zeta3: f64,
    /// `ln ζ̂³`, finite even when `ζ̂³` underflows.
    pub log_zeta3: f64,
}

/// Computes the ζ-terms and the ratio `(ζ̂¹ + ζ̂²) / ζ̂³`.
///
/// The ratio is formed from likelihoods rescaled by their maximum, so it is
/// accurate even when every `g(ξ^i, y)` is far below the smallest normal
/// double. Fails with `DegenerateLikelihood` only when all of them vanish.
pub fn zeta_hat<M: StateSpaceModel>(
    model: &M,
    cloud: &ParticleCloud<M::State>,
    stats: &BackwardStatistics,
    y: &M::Obs,
    theta: &ParameterVector,
) -> Result<(ZetaTriple, Vec<f64>)> {
    check_parameter(model, theta)?;
    if stats.len() != cloud.len() {
        return Err(Error::Dimension("statistics and cloud differ in size".into()));
    }
    let tau_bar = smoothed_estimate(stats);
    zeta_unchecked(model, cloud, stats, &tau_bar, y, theta)
}

fn zeta_unchecked<M: StateSpaceModel>(
    model: &M,
    cloud: &ParticleCloud<M::State>,
    stats: &BackwardStatistics,
    tau_bar: &[f64],
    y: &M::Obs,
    theta: &[f64],
) -> Result<(ZetaTriple, Vec<f64>)> {
    let d = model.param_dim();
    let n = cloud.len() as f64;
    let log_g: Vec<f64> = cloud
        .particles()
        .iter()
        .map(|x| model.log_emission_density(theta, x, y))
        .collect();
    let shift = log_g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(shift > f64::NEG_INFINITY) || shift.is_nan() {
        return Err(Error::DegenerateLikelihood { t: cloud.t() });
    }
    let mut s1 = vec![0.0; d];
    let mut s2 = vec![0.0; d];
    let mut s3 = 0.0;
    let mut grad = vec![0.0; d];
    for ((x, lg), r) in cloud.particles().iter().zip(&log_g).zip(stats.rows()) {
        let w = (lg - shift).exp();
        if w == 0.0 {
            continue;
        }
        grad.iter_mut().for_each(|v| *v = 0.0);
        model.add_grad_log_emission(theta, x, y, &mut grad)?;
        for k in 0..d {
            s1[k] += w * grad[k];
            s2[k] += w * (r[k] - tau_bar[k]);
        }
        s3 += w;
    }
    let direction: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| (a + b) / s3).collect();
    let scale = shift.exp() / n;
    let triple = ZetaTriple {
        zeta1: s1.iter().map(|v| v * scale).collect(),
        zeta2: s2.iter().map(|v| v * scale).collect(),
        zeta3: s3 * scale,
        log_zeta3: shift + (s3 / n).ln(),
    };
    Ok((triple, direction))
}

/// Clamps θ into the model's admissible box.
pub fn project<M: StateSpaceModel>(theta: &[f64], model: &M) -> Result<ParameterVector> {
    ParameterVector::new(model.project(theta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmlConfig {
    pub rule: UpdateRule,
    pub schedule: StepSchedule,
    /// Updates are skipped when `ζ̂³` falls below this.
    pub zeta3_floor: f64,
    /// Cap on the Euclidean norm of `ζ̂`; `None` disables clipping.
    pub clip: Option<f64>,
    /// The parameter is held fixed for the first `warmup` steps; the
    /// schedule keeps counting from `t = 1`.
    pub warmup: usize,
}

impl Default for RmlConfig {
    fn default() -> Self {
        RmlConfig {
            rule: UpdateRule::Paris(Default::default()),
            schedule: StepSchedule::default(),
            zeta3_floor: 1e-12,
            clip: Some(100.0),
            warmup: 0,
        }
    }
}

impl RmlConfig {
    pub fn validate(&self) -> Result<()> {
        self.rule.validate()?;
        self.schedule.validate()?;
        if !(self.zeta3_floor >= 0.0) {
            return Err(Error::Config("zeta3_floor must be non-negative".into()));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::Config("clip must be positive".into()));
            }
        }
        Ok(())
    }
}

/// What happened in one RML step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmlStepReport {
    /// Time index of the observation that drove the step.
    pub t: usize,
    /// Parameter after the step.
    pub theta: Vec<f64>,
    pub zeta_hat: Vec<f64>,
    pub zeta3: f64,
    pub log_zeta3: f64,
    pub gamma: f64,
    pub skipped: bool,
    pub clipped: bool,
    pub update: UpdateDiagnostics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RmlDiagnostics {
    pub last_zeta: Option<ZetaTriple>,
    pub skip_events: usize,
    pub clip_events: usize,
    pub degenerate_events: usize,
    pub fallbacks: usize,
    pub backward_trials: usize,
    pub backward_draws: usize,
}

/// Full state of an RML run: the cloud at time `t` weighted with `y_t`
/// under `θ_t`, its statistics, and the observation it was weighted with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmlState<S, O> {
    theta: ParameterVector,
    cloud: ParticleCloud<S>,
    stats: BackwardStatistics,
    last_obs: O,
    seed: StreamSeed,
    config: RmlConfig,
    diagnostics: RmlDiagnostics,
}

impl<S, O> RmlState<S, O> {
    pub fn t(&self) -> usize {
        self.cloud.t()
    }

    pub fn theta(&self) -> &ParameterVector {
        &self.theta
    }

    pub fn cloud(&self) -> &ParticleCloud<S> {
        &self.cloud
    }

    pub fn stats(&self) -> &BackwardStatistics {
        &self.stats
    }

    pub fn config(&self) -> &RmlConfig {
        &self.config
    }

    pub fn diagnostics(&self) -> &RmlDiagnostics {
        &self.diagnostics
    }

    pub fn seed(&self) -> StreamSeed {
        self.seed
    }

    /// The time-`t` predictor view (cloud without weights) as a tangent state.
    pub fn to_tangent_state(&self) -> TangentState<S>
    where
        S: Clone,
    {
        TangentState {
            cloud: self.cloud.clone().unweighted(),
            tau_bar: smoothed_estimate(&self.stats),
            stats: self.stats.clone(),
            seed: self.seed,
            last_update: UpdateDiagnostics::default(),
        }
    }
}

impl<S: Serialize + DeserializeOwned, O: Serialize + DeserializeOwned> RmlState<S, O> {
    /// Writes the state as JSON. The random streams are keyed by seed and
    /// time, so this captures the stream position exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

/// Starts a run at `θ_0`, consuming `y_0`.
pub fn rml_init<M: StateSpaceModel>(
    model: &M,
    theta0: ParameterVector,
    n: usize,
    y0: &M::Obs,
    config: RmlConfig,
    seed: StreamSeed,
) -> Result<RmlState<M::State, M::Obs>> {
    config.validate()?;
    let theta = project(&theta0, model)?;
    check_parameter(model, &theta)?;
    let cloud = weight_unchecked(model, init_cloud(model, n, seed)?, y0, &theta);
    if cloud.weight_sum() <= 0.0 {
        return Err(Error::Collapsed { t: 0 });
    }
    Ok(RmlState {
        stats: BackwardStatistics::zeros(0, n, model.param_dim()),
        theta,
        cloud,
        last_obs: y0.clone(),
        seed,
        config,
        diagnostics: RmlDiagnostics::default(),
    })
}

/// Consumes `y_{t+1}`: advances under `θ_t`, estimates ζ̂, updates θ, and
/// weights the new cloud with `y_{t+1}` under `θ_{t+1}`.
pub fn rml_step<M: StateSpaceModel>(
    model: &M,
    state: RmlState<M::State, M::Obs>,
    y_next: &M::Obs,
) -> Result<(RmlState<M::State, M::Obs>, RmlStepReport)> {
    let RmlState {
        theta,
        cloud,
        stats,
        last_obs,
        seed,
        config,
        mut diagnostics,
    } = state;
    let (next, stats, update) = advance(model, &cloud, &stats, &last_obs, &theta, &config.rule, seed)?;
    diagnostics.fallbacks += update.fallbacks;
    diagnostics.backward_trials += update.trials;
    diagnostics.backward_draws += update.draws;
    let t_next = next.t();
    let gamma = if t_next > config.warmup {
        step_size(&config.schedule, t_next)
    } else {
        0.0
    };
    let tau_bar = smoothed_estimate(&stats);

    let mut skipped = false;
    let mut clipped = false;
    let (mut direction, zeta3, log_zeta3) = match zeta_unchecked(model, &next, &stats, &tau_bar, y_next, &theta) {
        Ok((triple, dir)) => {
            let z = (dir, triple.zeta3, triple.log_zeta3);
            diagnostics.last_zeta = Some(triple);
            z
        }
        Err(Error::DegenerateLikelihood { .. }) => {
            diagnostics.degenerate_events += 1;
            skipped = true;
            (vec![0.0; model.param_dim()], 0.0, f64::NEG_INFINITY)
        }
        Err(e) => return Err(e),
    };
    if !skipped && zeta3 < config.zeta3_floor {
        skipped = true;
    }
    if !skipped && direction.iter().any(|v| !v.is_finite()) {
        skipped = true;
    }
    let new_theta = if skipped {
        diagnostics.skip_events += 1;
        theta
    } else {
        if let Some(cap) = config.clip {
            let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > cap {
                clipped = true;
                diagnostics.clip_events += 1;
                direction.iter_mut().for_each(|v| *v *= cap / norm);
            }
        }
        if gamma == 0.0 {
            theta
        } else {
            let raw: Vec<f64> = theta.iter().zip(&direction).map(|(th, z)| th + gamma * z).collect();
            project(&raw, model)?
        }
    };
    model.validate(&new_theta)?;

    let weighted = weight_unchecked(model, next, y_next, &new_theta);
    if weighted.weight_sum() <= 0.0 {
        return Err(Error::Collapsed { t: t_next });
    }
    let report = RmlStepReport {
        t: t_next,
        theta: new_theta.to_vec(),
        zeta_hat: direction,
        zeta3,
        log_zeta3,
        gamma,
        skipped,
        clipped,
        update,
    };
    Ok((
        RmlState {
            theta: new_theta,
            cloud: weighted,
            stats,
            last_obs: y_next.clone(),
            seed,
            config,
            diagnostics,
        },
        report,
    ))
}

/// Writes one CSV row per step:
/// `t, theta_k…, zeta_k…, zeta3, log_zeta3, gamma, skipped, clipped`.
pub struct RmlCsv<W: Write> {
    out: W,
}

impl<W: Write> RmlCsv<W> {
    pub fn new(mut out: W, dim: usize) -> std::io::Result<Self> {
        let mut header = vec!["t".to_string()];
        header.extend((0..dim).map(|k| format!("theta_{k}")));
        header.extend((0..dim).map(|k| format!("zeta_{k}")));
        header.extend(["zeta3", "log_zeta3", "gamma", "skipped", "clipped"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        Ok(RmlCsv { out })
    }

    pub fn record(&mut self, r: &RmlStepReport) -> std::io::Result<()> {
        let mut row = vec![r.t.to_string()];
        row.extend(r.theta.iter().map(|v| format!("{v:?}")));
        row.extend(r.zeta_hat.iter().map(|v| format!("{v:?}")));
        row.push(format!("{:?}", r.zeta3));
        row.push(format!("{:?}", r.log_zeta3));
        row.push(format!("{:?}", r.gamma));
        row.push((r.skipped as u8).to_string());
        row.push((r.clipped as u8).to_string());
        writeln!(self.out, "{}", row.join(","))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{simulate, HmmModel, LgssmModel, LgssmParams, SvModel};
    use crate::smoothing::BackwardSamplerConfig;
    use crate::tangent::{tangent_init, tangent_step};

    fn pv(v: &[f64]) -> ParameterVector {
        ParameterVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn step_size_examples() {
        let s = StepSchedule::default();
        assert_eq!(step_size(&s, 1), 1.0);
        // 1024^0.6 = 2^6.
        assert!((step_size(&s, 1024) - 0.015_625).abs() < 1e-15);
        let h = StepSchedule::new(1.0, 1.0).unwrap();
        let total: f64 = (1..=100_000).map(|t| step_size(&h, t)).sum();
        let euler_gamma = 0.577_215_664_901_532_9;
        assert!((total - (100_000f64.ln() + euler_gamma)).abs() < 1e-4);
        assert!(StepSchedule::new(1.0, 0.5).is_err());
    }

    #[test]
    fn projection_examples() {
        let m = SvModel::default();
        assert_eq!(project(&[0.5, 0.2, 1.0], &m).unwrap().to_vec(), vec![0.5, 0.2, 1.0]);
        assert_eq!(project(&[0.5, -0.01, 1.0], &m).unwrap()[1], 1e-6);
        assert_eq!(project(&[1.5, 0.1, 1.0], &m).unwrap()[0], 0.999);
    }

    #[test]
    fn theta_free_emission_gives_zero_zeta1() {
        let m = LgssmModel::new(0.7, 1.0, 1.0, LgssmParams::Phi).unwrap();
        let th = pv(&[0.7]);
        let mut s = tangent_init(&m, 200, StreamSeed(1)).unwrap();
        for y in [0.3, -0.2, 1.1] {
            s = tangent_step(&m, s, &y, &th, &UpdateRule::Paris(BackwardSamplerConfig::new(2))).unwrap();
        }
        let (z, dir) = zeta_hat(&m, s.cloud(), s.stats(), &0.5, &th).unwrap();
        assert_eq!(z.zeta1, vec![0.0]);
        assert!((dir[0] - z.zeta2[0] / z.zeta3).abs() < 1e-12 * dir[0].abs().max(1e-300));
    }

    #[test]
    fn constant_statistics_give_zero_zeta2() {
        let m = SvModel::default();
        let th = pv(&[0.8, 0.1, 1.0]);
        let cloud = init_cloud(&m, 100, StreamSeed(2)).unwrap();
        let stats = BackwardStatistics::from_rows(0, &vec![vec![0.5, -1.0, 3.0]; 100]).unwrap();
        let (z, _) = zeta_hat(&m, &cloud, &stats, &0.3, &th).unwrap();
        assert_eq!(z.zeta2, vec![0.0; 3]);
    }

    #[test]
    fn underflowing_likelihood_keeps_a_finite_ratio() {
        let m = SvModel::default();
        let th = pv(&[0.8, 0.1, 1.0]);
        let cloud = ParticleCloud::from_particles(0, vec![0.0, 0.5]).unwrap();
        let stats = BackwardStatistics::from_rows(0, &[vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]]).unwrap();
        let (z, dir) = zeta_hat(&m, &cloud, &stats, &1000.0, &th).unwrap();
        assert_eq!(z.zeta3, 0.0);
        assert!(z.log_zeta3.is_finite());
        assert!(dir.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn frozen_schedule_reproduces_the_tangent_filter() {
        let m = HmmModel::test_chain();
        let th = pv(&[0.3]);
        let traj = simulate(&m, &th, 30, StreamSeed(3)).unwrap();
        let ys = &traj.observations;
        let config = RmlConfig {
            schedule: StepSchedule::frozen(),
            clip: None,
            ..Default::default()
        };
        let mut rml = rml_init(&m, th.clone(), 400, &ys[0], config, StreamSeed(4)).unwrap();
        let mut tan = tangent_init(&m, 400, StreamSeed(4)).unwrap();
        for t in 0..30 {
            tan = tangent_step(&m, tan, &ys[t], &th, &config.rule).unwrap();
            let (next, report) = rml_step(&m, rml, &ys[t + 1]).unwrap();
            rml = next;
            assert_eq!(report.theta, vec![0.3]);
            assert_eq!(rml.cloud().particles(), tan.cloud().particles());
            assert_eq!(rml.stats(), tan.stats());
        }
    }

    #[test]
    fn zero_dimensional_parameter_is_a_no_op() {
        let m = LgssmModel::new(0.7, 1.0, 1.0, LgssmParams::None).unwrap();
        let mut s = rml_init(&m, ParameterVector::empty(), 50, &0.1, RmlConfig::default(), StreamSeed(5)).unwrap();
        for y in [0.2, 0.6, -0.3] {
            let (next, r) = rml_step(&m, s, &y).unwrap();
            assert!(r.theta.is_empty());
            s = next;
        }
    }

    #[test]
    fn floor_skips_the_update() {
        let m = SvModel::default();
        let config = RmlConfig {
            zeta3_floor: f64::INFINITY,
            ..Default::default()
        };
        let th = pv(&[0.5, 0.3, 2.0]);
        let mut s = rml_init(&m, th.clone(), 100, &0.0, config, StreamSeed(6)).unwrap();
        for y in [0.5, -1.0, 2.0] {
            let (next, r) = rml_step(&m, s, &y).unwrap();
            assert!(r.skipped);
            assert_eq!(next.theta(), &th);
            s = next;
        }
        assert_eq!(s.diagnostics().skip_events, 3);
    }

    #[test]
    fn checkpoint_round_trip_resumes_identically() {
        let m = SvModel::default();
        let th = pv(&[0.6, 0.2, 1.5]);
        let truth = pv(&[0.8, 0.1, 1.0]);
        let traj = simulate(&m, &truth, 40, StreamSeed(7)).unwrap();
        let ys = &traj.observations;
        let mut s = rml_init(&m, th, 200, &ys[0], RmlConfig::default(), StreamSeed(8)).unwrap();
        for y in &ys[1..20] {
            s = rml_step(&m, s, y).unwrap().0;
        }
        let dir = std::env::temp_dir().join(format!("rml-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("state.json");
        s.save(&path).unwrap();
        let restored: RmlState<f64, f64> = RmlState::load(&path).unwrap();
        assert_eq!(restored, s);
        let (mut a, mut b) = (s, restored);
        for y in &ys[20..] {
            a = rml_step(&m, a, y).unwrap().0;
            b = rml_step(&m, b, y).unwrap().0;
        }
        assert_eq!(a, b);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn csv_row_layout() {
        let mut w = RmlCsv::new(Vec::new(), 2).unwrap();
        w.record(&RmlStepReport {
            t: 3,
            theta: vec![0.5, 0.25],
            zeta_hat: vec![-1.0, 2.0],
            zeta3: 0.125,
            log_zeta3: 0.125f64.ln(),
            gamma: 0.5,
            skipped: false,
            clipped: true,
            update: UpdateDiagnostics::default(),
        })
        .unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,theta_0,theta_1,zeta_0,zeta_1,zeta3,log_zeta3,gamma,skipped,clipped");
        assert!(lines[1].starts_with("3,0.5,0.25,-1.0,2.0,0.125,"));
        assert!(lines[1].ends_with(",0.5,0,1"));
    }
}
