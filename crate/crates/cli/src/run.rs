//! Batch runs: data simulation, replicate loops and artifacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use paris_smc::models::{simulate, write_observations_csv, write_states_csv, TrajectoryFormat, Trajectory};
use paris_smc::smc::write_cloud_csv;
use paris_smc::{
    rml_init, rml_step, tangent_init, tangent_measure, tangent_step, Error as CoreError, ParameterVector, Purpose,
    RmlCsv, StateSpaceModel, StreamSeed, TangentCsv, TestFunction,
};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{BuiltModel, ExperimentConfig, StartConfig, TestFunctionSpec, SCHEMA_VERSION};
use crate::error::CliError;

/// Models the runner can drive.
pub trait RunModel:
    StateSpaceModel<State: Serialize + DeserializeOwned, Obs: Serialize + DeserializeOwned>
    + TrajectoryFormat
    + Clone
    + 'static
{
}

impl<M> RunModel for M where
    M: StateSpaceModel<State: Serialize + DeserializeOwned, Obs: Serialize + DeserializeOwned>
        + TrajectoryFormat
        + Clone
        + 'static
{
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Tangent,
    Rml,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Tangent => "tangent",
            Command::Rml => "rml",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplicateStatus {
    Ok,
    Collapsed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub replicate: usize,
    pub seed: u64,
    /// Per-step CSV, relative to the output directory.
    pub csv: String,
    pub status: ReplicateStatus,
    /// Time index at which the run aborted.
    pub collapsed_at: Option<usize>,
    pub steps: usize,
    /// Starting parameter (RML) or evaluation parameter (tangent).
    pub start: Vec<f64>,
    /// Values of the summary's `value_columns` in the last CSV row.
    pub final_value: Vec<f64>,
    pub median_step_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rml: Option<RmlCounters>,
    /// Mean squared landmark error at the start and at the end.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmark_mse: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmlCounters {
    pub skip_events: usize,
    pub clip_events: usize,
    pub degenerate_events: usize,
    pub fallbacks: usize,
    pub backward_trials: usize,
    pub backward_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub software: String,
    pub version: String,
    pub seed: u64,
    pub data_seed: u64,
    pub replicate_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub command: Command,
    pub model: String,
    pub provenance: Provenance,
    pub config: ExperimentConfig,
    pub true_parameter: Vec<f64>,
    /// Data files, relative to the output directory.
    pub data_files: Vec<String>,
    /// CSV columns summarised by `final_value`.
    pub value_columns: Vec<String>,
    pub replicates: Vec<ReplicateSummary>,
    /// Mean and sample variance (divisor `n − 1`) of `final_value` over the
    /// replicates that did not collapse.
    pub final_mean: Option<Vec<f64>>,
    pub final_variance: Option<Vec<f64>>,
    /// Median wall-clock time of one estimator step over all replicates.
    pub median_step_seconds: Option<f64>,
    /// Mean over replicates of the landmark MSE at the start and at the end.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmark_mse: Option<(f64, f64)>,
}

impl Summary {
    pub fn collapsed(&self) -> usize {
        self.replicates.iter().filter(|r| r.status == ReplicateStatus::Collapsed).count()
    }
}

/// Per-replicate series kept in memory for plot data.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlotTrace {
    pub names: Vec<String>,
    pub t: Vec<usize>,
    /// `values[row][series]`.
    pub values: Vec<Vec<f64>>,
}

impl PlotTrace {
    fn push(&mut self, t: usize, row: Vec<f64>) {
        self.t.push(t);
        self.values.push(row);
    }
}

#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub out_dir: PathBuf,
    pub summary_path: PathBuf,
    pub csv_paths: Vec<PathBuf>,
    pub summary: Summary,
    pub traces: Vec<PlotTrace>,
}

struct Outcome {
    summary: ReplicateSummary,
    trace: PlotTrace,
    step_secs: Vec<f64>,
}

pub fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Mean and sample variance of each column.
pub fn mean_and_variance(rows: &[&[f64]]) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let Some(first) = rows.first() else {
        return (None, None);
    };
    let n = rows.len() as f64;
    let d = first.len();
    let mean: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    if rows.len() < 2 {
        return (Some(mean), None);
    }
    let var = (0..d)
        .map(|k| rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0))
        .collect();
    (Some(mean), Some(var))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(|e| {
        std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))
    })?))
}

fn replicate_seed(cfg: &ExperimentConfig, r: usize) -> StreamSeed {
    StreamSeed(cfg.seed).replicate(r as u64)
}

fn start_parameter<M: StateSpaceModel>(
    model: &M,
    cfg: &ExperimentConfig,
    truth: &[f64],
    r: usize,
) -> Result<ParameterVector, CliError> {
    let mut rng = replicate_seed(cfg, r).sequential(Purpose::Auxiliary);
    let raw: Vec<f64> = match &cfg.start {
        StartConfig::Truth => truth.to_vec(),
        StartConfig::Fixed { theta } => theta.clone(),
        StartConfig::UniformBox { radius } => truth
            .iter()
            .map(|v| if *radius > 0.0 { v + rng.random_range(-radius..*radius) } else { *v })
            .collect(),
        StartConfig::Gaussian { std } => truth
            .iter()
            .map(|v| v + std * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    };
    if raw.len() != model.param_dim() {
        return Err(CliError::Config(format!(
            "start parameter has {} entries, model expects {}",
            raw.len(),
            model.param_dim()
        )));
    }
    let th = ParameterVector::new(model.project(&raw)).map_err(|e| CliError::Config(e.to_string()))?;
    model.validate(&th).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(th)
}

fn checked_parameter<M: StateSpaceModel>(model: &M, v: &[f64], what: &str) -> Result<ParameterVector, CliError> {
    let th = ParameterVector::new(v.to_vec()).map_err(|e| CliError::Config(format!("{what}: {e}")))?;
    if th.dim() != model.param_dim() {
        return Err(CliError::Config(format!(
            "{what} has {} entries, model expects {}",
            th.dim(),
            model.param_dim()
        )));
    }
    model.validate(&th).map_err(|e| CliError::Config(format!("{what}: {e}")))?;
    Ok(th)
}

/// Squared error of each free landmark; θ lists landmark coordinates in pairs.
fn landmark_errors(theta: &[f64], truth: &[f64]) -> Vec<f64> {
    theta
        .chunks(2)
        .zip(truth.chunks(2))
        .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct Context<'a, M: RunModel> {
    model: &'a M,
    ys: &'a [M::Obs],
    truth: &'a [f64],
    cfg: &'a ExperimentConfig,
    out_dir: &'a Path,
    /// Free landmark ids, for SLAM runs.
    landmarks: Option<Vec<usize>>,
}

fn rml_replicate<M: RunModel>(ctx: &Context<'_, M>, r: usize) -> Result<Outcome, CliError> {
    let Context {
        model, ys, truth, cfg, ..
    } = *ctx;
    let rml_cfg = cfg.rml_config()?;
    let seed = replicate_seed(cfg, r);
    let theta0 = start_parameter(model, cfg, truth, r)?;
    let d = model.param_dim();
    let csv_name = format!("rml_r{r:03}.csv");
    let mut csv = RmlCsv::new(create(&ctx.out_dir.join(&csv_name))?, d)?;

    let mut trace = PlotTrace::default();
    trace.names = (0..d).map(|k| format!("theta_{k}")).collect();
    let slam = ctx.landmarks.clone();
    if let Some(ids) = &slam {
        trace.names.extend(ids.iter().map(|i| format!("mse_landmark_{i}")));
        trace.names.push("mse_mean".into());
    }
    let plot_row = |theta: &[f64]| {
        let mut row = theta.to_vec();
        if slam.is_some() {
            let e = landmark_errors(theta, truth);
            let m = mean(&e);
            row.extend(e);
            row.push(m);
        }
        row
    };
    trace.push(0, plot_row(&theta0));

    let mut step_secs = Vec::with_capacity(cfg.horizon);
    let mut status = ReplicateStatus::Ok;
    let mut collapsed_at = None;
    let mut last_theta = theta0.to_vec();
    let mut steps = 0;
    let mut counters = RmlCounters {
        skip_events: 0,
        clip_events: 0,
        degenerate_events: 0,
        fallbacks: 0,
        backward_trials: 0,
        backward_draws: 0,
    };
    let mut state = match rml_init(model, theta0.clone(), cfg.particles, &ys[0], rml_cfg, seed) {
        Ok(s) => Some(s),
        Err(CoreError::Collapsed { t }) => {
            status = ReplicateStatus::Collapsed;
            collapsed_at = Some(t);
            None
        }
        Err(e) => return Err(e.into()),
    };
    let horizon = cfg.horizon.min(ys.len() - 1);
    if state.is_some() {
        for y in &ys[1..=horizon] {
            let s = state.take().expect("state present while running");
            let clock = Instant::now();
            let res = rml_step(model, s, y);
            step_secs.push(clock.elapsed().as_secs_f64());
            match res {
                Ok((next, report)) => {
                    csv.record(&report)?;
                    steps += 1;
                    if report.t % cfg.plot_every == 0 || report.t == horizon {
                        trace.push(report.t, plot_row(&report.theta));
                    }
                    last_theta = report.theta;
                    state = Some(next);
                }
                Err(CoreError::Collapsed { t }) => {
                    status = ReplicateStatus::Collapsed;
                    collapsed_at = Some(t);
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
        if let Some(s) = &state {
            let dg = s.diagnostics();
            counters = RmlCounters {
                skip_events: dg.skip_events,
                clip_events: dg.clip_events,
                degenerate_events: dg.degenerate_events,
                fallbacks: dg.fallbacks,
                backward_trials: dg.backward_trials,
                backward_draws: dg.backward_draws,
            };
            if cfg.checkpoint {
                s.save(&ctx.out_dir.join(format!("checkpoint_r{r:03}.json")))?;
            }
            if cfg.dump_cloud {
                write_cloud_csv(model, s.cloud(), true, create(&ctx.out_dir.join(format!("cloud_r{r:03}.csv")))?)?;
            }
        }
    }
    csv.into_inner().flush()?;
    let landmark_mse = ctx
        .landmarks
        .as_ref()
        .map(|_| (mean(&landmark_errors(&theta0, truth)), mean(&landmark_errors(&last_theta, truth))));
    Ok(Outcome {
        summary: ReplicateSummary {
            replicate: r,
            seed: seed.0,
            csv: csv_name,
            status,
            collapsed_at,
            steps,
            start: theta0.to_vec(),
            final_value: last_theta,
            median_step_seconds: median(&mut step_secs.clone()),
            rml: Some(counters),
            landmark_mse,
        },
        trace,
        step_secs,
    })
}

fn test_functions<M: RunModel>(model: &M, cfg: &ExperimentConfig) -> Result<Vec<TestFunction<M::State>>, CliError> {
    cfg.test_functions
        .iter()
        .map(|s| {
            let spec = TestFunctionSpec::parse(s)?;
            let m = model.clone();
            Ok(TestFunction::new(spec.label(), move |x: &M::State| spec.eval(&m.state_coords(x))))
        })
        .collect()
}

fn tangent_value_columns(cfg: &ExperimentConfig, d: usize) -> Result<Vec<String>, CliError> {
    let mut cols = Vec::new();
    for s in &cfg.test_functions {
        let label = TestFunctionSpec::parse(s)?.label();
        cols.extend((0..d).map(|k| format!("{label}_{k}")));
    }
    Ok(cols)
}

fn tangent_replicate<M: RunModel>(ctx: &Context<'_, M>, r: usize) -> Result<Outcome, CliError> {
    let Context {
        model, ys, truth, cfg, ..
    } = *ctx;
    let rule = cfg.update_rule()?;
    let seed = replicate_seed(cfg, r);
    let theta = match &cfg.eval_parameter {
        Some(v) => checked_parameter(model, v, "eval_parameter")?,
        None => checked_parameter(model, truth, "true_parameter")?,
    };
    let d = model.param_dim();
    let csv_name = format!("tangent_r{r:03}.csv");
    let functions = test_functions(model, cfg)?;
    let evals: Vec<TestFunctionSpec> =
        cfg.test_functions.iter().map(|s| TestFunctionSpec::parse(s)).collect::<Result<_, _>>()?;
    let mut csv = TangentCsv::new(create(&ctx.out_dir.join(&csv_name))?, d, functions)?;
    let columns = tangent_value_columns(cfg, d)?;
    let mut trace = PlotTrace {
        names: columns,
        ..Default::default()
    };

    let mut step_secs = Vec::with_capacity(cfg.horizon);
    let mut status = ReplicateStatus::Ok;
    let mut collapsed_at = None;
    let mut last = Vec::new();
    let mut steps = 0;
    let mut state = Some(tangent_init(model, cfg.particles, seed)?);
    let horizon = cfg.horizon.min(ys.len());
    for y in &ys[..horizon] {
        let s = state.take().expect("state present while running");
        let clock = Instant::now();
        let res = tangent_step(model, s, y, &theta, &rule);
        step_secs.push(clock.elapsed().as_secs_f64());
        match res {
            Ok(next) => {
                csv.record(&next)?;
                steps += 1;
                let mut row = Vec::with_capacity(evals.len() * d);
                for f in &evals {
                    row.extend(tangent_measure(&next, |x| f.eval(&model.state_coords(x))));
                }
                if next.t() % cfg.plot_every == 0 || next.t() == horizon {
                    trace.push(next.t(), row.clone());
                }
                last = row;
                state = Some(next);
            }
            Err(CoreError::Collapsed { t }) => {
                status = ReplicateStatus::Collapsed;
                collapsed_at = Some(t);
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    if let Some(s) = &state {
        if cfg.checkpoint {
            let text = serde_json::to_string(s).map_err(|e| CoreError::Checkpoint(e.to_string()))?;
            std::fs::write(ctx.out_dir.join(format!("checkpoint_r{r:03}.json")), text)?;
        }
        if cfg.dump_cloud {
            write_cloud_csv(model, s.cloud(), true, create(&ctx.out_dir.join(format!("cloud_r{r:03}.csv")))?)?;
        }
    }
    csv.into_inner().flush()?;
    Ok(Outcome {
        summary: ReplicateSummary {
            replicate: r,
            seed: seed.0,
            csv: csv_name,
            status,
            collapsed_at,
            steps,
            start: theta.to_vec(),
            final_value: last,
            median_step_seconds: median(&mut step_secs.clone()),
            rml: None,
            landmark_mse: None,
        },
        trace,
        step_secs,
    })
}

fn write_data<M: RunModel>(
    model: &M,
    traj: &Trajectory<M::State, M::Obs>,
    out_dir: &Path,
) -> Result<Vec<String>, CliError> {
    let mut w = create(&out_dir.join("states.csv"))?;
    write_states_csv(model, &traj.states, &mut w)?;
    w.flush()?;
    let mut w = create(&out_dir.join("observations.csv"))?;
    write_observations_csv(model, &traj.observations, &mut w)?;
    w.flush()?;
    Ok(vec!["states.csv".into(), "observations.csv".into()])
}

fn run_model<M: RunModel>(
    command: Command,
    model: &M,
    traj: &Trajectory<M::State, M::Obs>,
    truth: &[f64],
    cfg: &ExperimentConfig,
    out_dir: &Path,
    landmarks: Option<Vec<usize>>,
) -> Result<RunArtifact, CliError> {
    let data_files = write_data(model, traj, out_dir)?;
    let ctx = Context {
        model,
        ys: &traj.observations,
        truth,
        cfg,
        out_dir,
        landmarks,
    };
    let d = model.param_dim();
    let (value_columns, outcomes): (Vec<String>, Vec<Outcome>) = match command {
        Command::Simulate => (Vec::new(), Vec::new()),
        Command::Rml => (
            (0..d).map(|k| format!("theta_{k}")).collect(),
            (0..cfg.replicates)
                .into_par_iter()
                .map(|r| rml_replicate(&ctx, r))
                .collect::<Result<_, _>>()?,
        ),
        Command::Tangent => (
            tangent_value_columns(cfg, d)?,
            (0..cfg.replicates)
                .into_par_iter()
                .map(|r| tangent_replicate(&ctx, r))
                .collect::<Result<_, _>>()?,
        ),
    };

    let ok: Vec<&[f64]> = outcomes
        .iter()
        .filter(|o| o.summary.status == ReplicateStatus::Ok)
        .map(|o| o.summary.final_value.as_slice())
        .collect();
    let (final_mean, final_variance) = mean_and_variance(&ok);
    let mut all_steps: Vec<f64> = outcomes.iter().flat_map(|o| o.step_secs.iter().copied()).collect();
    let mse: Vec<(f64, f64)> = outcomes.iter().filter_map(|o| o.summary.landmark_mse).collect();
    let landmark_mse = (!mse.is_empty()).then(|| {
        let n = mse.len() as f64;
        (mse.iter().map(|m| m.0).sum::<f64>() / n, mse.iter().map(|m| m.1).sum::<f64>() / n)
    });
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        command,
        model: cfg.model.kind().into(),
        provenance: Provenance {
            software: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            data_seed: cfg.data_seed(),
            replicate_seeds: outcomes.iter().map(|o| o.summary.seed).collect(),
        },
        config: cfg.clone(),
        true_parameter: truth.to_vec(),
        data_files,
        value_columns,
        replicates: outcomes.iter().map(|o| o.summary.clone()).collect(),
        final_mean,
        final_variance,
        median_step_seconds: median(&mut all_steps),
        landmark_mse,
    };
    let summary_path = out_dir.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    std::fs::write(out_dir.join("config.json"), cfg.to_json())?;
    Ok(RunArtifact {
        out_dir: out_dir.to_path_buf(),
        summary_path,
        csv_paths: summary.replicates.iter().map(|r| out_dir.join(&r.csv)).collect(),
        summary,
        traces: outcomes.into_iter().map(|o| o.trace).collect(),
    })
}

/// Simulates the shared data record, runs every replicate and writes the
/// artifacts into `out_dir`. Collapsed replicates are recorded in the
/// summary rather than returned as errors.
pub fn run(command: Command, cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifact, CliError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let built = cfg.model.build()?;
    let truth = cfg.true_parameter.clone().unwrap_or_else(|| built.nominal_parameter());
    let data_seed = StreamSeed(cfg.data_seed());
    match &built {
        BuiltModel::Sv(m) => {
            let th = checked_parameter(m, &truth, "true_parameter")?;
            let traj = simulate(m, &th, cfg.horizon, data_seed)?;
            run_model(command, m, &traj, &truth, cfg, out_dir, None)
        }
        BuiltModel::Lgssm(m) => {
            let th = checked_parameter(m, &truth, "true_parameter")?;
            let traj = simulate(m, &th, cfg.horizon, data_seed)?;
            run_model(command, m, &traj, &truth, cfg, out_dir, None)
        }
        BuiltModel::Hmm(m) => {
            let th = checked_parameter(m, &truth, "true_parameter")?;
            let traj = simulate(m, &th, cfg.horizon, data_seed)?;
            run_model(command, m, &traj, &truth, cfg, out_dir, None)
        }
        BuiltModel::Slam(base, track) => {
            let th = checked_parameter(base, &truth, "true_parameter")?;
            let (m, traj) = base.simulate_loop(&th, track, cfg.horizon, data_seed)?;
            let ids = m.free_landmarks();
            run_model(command, &m, &traj, &truth, cfg, out_dir, Some(ids))
        }
    }
}

/// Writes `plotdata.csv` with columns `replicate, t, series, value`.
pub fn emit_plotdata(artifact: &RunArtifact) -> Result<PathBuf, CliError> {
    let path = artifact.out_dir.join("plotdata.csv");
    let mut w = create(&path)?;
    writeln!(w, "replicate,t,series,value")?;
    for (r, trace) in artifact.traces.iter().enumerate() {
        for (t, row) in trace.t.iter().zip(&trace.values) {
            for (name, v) in trace.names.iter().zip(row) {
                writeln!(w, "{r},{t},{name},{v:?}")?;
            }
        }
    }
    w.flush()?;
    Ok(path)
}
