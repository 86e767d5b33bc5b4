//! Experiment configuration.
//!
//! Configurations are JSON objects. Apart from the `model` and `start`
//! selectors every key is a scalar or a list, and unknown keys are
//! rejected so that a typo never silently falls back to a default.

use std::path::{Path, PathBuf};

use paris_smc::models::{HmmModel, HmmSpec, LgssmModel, LgssmParams, LoopTrack, SlamModel, SlamSpec, SvModel};
use paris_smc::{BackwardSamplerConfig, RmlConfig, StepSchedule, UpdateRule};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "PARIS_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Paris,
    Ffbsm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Stochastic volatility, θ = (φ, σ², β²).
    Sv {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        init_var: Option<f64>,
    },
    Lgssm {
        phi: f64,
        sigma2: f64,
        obs_var: f64,
        #[serde(default = "default_lgssm_params")]
        params: LgssmParams,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        init_var: Option<f64>,
    },
    /// Finite-state chain; the built-in three-state test chain when `spec`
    /// is absent.
    Hmm {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spec: Option<HmmSpec>,
    },
    /// Range-bearing SLAM on the default landmark layout, the first two
    /// landmarks fixed.
    Slam {
        landmarks: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        track: Option<LoopTrack>,
    },
}

fn default_lgssm_params() -> LgssmParams {
    LgssmParams::Phi
}

/// How each replicate picks its initial parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StartConfig {
    Truth,
    Fixed { theta: Vec<f64> },
    /// Uniform on `θ* ± radius` componentwise.
    UniformBox { radius: f64 },
    /// `θ* + std · N(0, I)`.
    Gaussian { std: f64 },
}

impl Default for StartConfig {
    fn default() -> Self {
        StartConfig::UniformBox { radius: 0.2 }
    }
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn hundred() -> usize {
    100
}
fn default_scale() -> f64 {
    1.0
}
fn default_exponent() -> f64 {
    0.6
}
fn default_clip() -> Option<f64> {
    Some(100.0)
}
fn default_floor() -> f64 {
    1e-12
}
fn default_test_functions() -> Vec<String> {
    vec!["coord:0".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    #[serde(default)]
    pub estimator: Estimator,
    pub particles: usize,
    /// Backward draws per particle (PaRIS only).
    #[serde(default = "two")]
    pub precision: usize,
    /// Accept-reject proposals before an exact backward draw.
    #[serde(default = "hundred")]
    pub max_trials: usize,
    #[serde(default = "default_scale")]
    pub step_scale: f64,
    #[serde(default = "default_exponent")]
    pub step_exponent: f64,
    pub horizon: usize,
    #[serde(default = "one")]
    pub replicates: usize,
    pub seed: u64,
    /// Seed of the simulated data record; defaults to `seed`. All
    /// replicates share the record.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Cap on the Euclidean norm of the RML direction; `null` disables it.
    #[serde(default = "default_clip")]
    pub clip: Option<f64>,
    #[serde(default = "default_floor")]
    pub zeta3_floor: f64,
    #[serde(default)]
    pub warmup: usize,
    #[serde(default)]
    pub start: StartConfig,
    /// Parameter generating the data; the model's nominal value if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_parameter: Option<Vec<f64>>,
    /// Parameter at which `tangent` runs; the true parameter if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_parameter: Option<Vec<f64>>,
    /// `coord:k`, `square:k` or `indicator:v` (first coordinate equal to `v`).
    #[serde(default = "default_test_functions")]
    pub test_functions: Vec<String>,
    /// Keep every `plot_every`-th step in the plot data.
    #[serde(default = "one")]
    pub plot_every: usize,
    /// Write each replicate's final state as a JSON checkpoint.
    #[serde(default)]
    pub checkpoint: bool,
    /// Write each replicate's final particle cloud as CSV.
    #[serde(default)]
    pub dump_cloud: bool,
}

impl ExperimentConfig {
    /// A configuration with every optional key at its default.
    pub fn new(model: ModelConfig, particles: usize, horizon: usize, seed: u64) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            model,
            estimator: Estimator::Paris,
            particles,
            precision: 2,
            max_trials: 100,
            step_scale: default_scale(),
            step_exponent: default_exponent(),
            horizon,
            replicates: 1,
            seed,
            data_seed: None,
            output_dir: None,
            clip: default_clip(),
            zeta3_floor: default_floor(),
            warmup: 0,
            start: StartConfig::default(),
            true_parameter: None,
            eval_parameter: None,
            test_functions: default_test_functions(),
            plot_every: 1,
            checkpoint: false,
            dump_cloud: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.particles == 0 {
            return bad("particles must be at least 1".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.plot_every == 0 {
            return bad("plot_every must be at least 1".into());
        }
        self.rml_config()?;
        match &self.start {
            StartConfig::UniformBox { radius } if !(*radius >= 0.0) => return bad("start radius must be >= 0".into()),
            StartConfig::Gaussian { std } if !(*std >= 0.0) => return bad("start std must be >= 0".into()),
            _ => {}
        }
        for f in &self.test_functions {
            TestFunctionSpec::parse(f)?;
        }
        Ok(())
    }

    pub fn update_rule(&self) -> Result<UpdateRule, CliError> {
        let rule = match self.estimator {
            Estimator::Paris => UpdateRule::Paris(BackwardSamplerConfig {
                precision: self.precision,
                max_trials: self.max_trials,
            }),
            Estimator::Ffbsm => UpdateRule::Ffbsm,
        };
        rule.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(rule)
    }

    pub fn rml_config(&self) -> Result<RmlConfig, CliError> {
        let schedule =
            StepSchedule::new(self.step_scale, self.step_exponent).map_err(|e| CliError::Config(e.to_string()))?;
        let cfg = RmlConfig {
            rule: self.update_rule()?,
            schedule,
            zeta3_floor: self.zeta3_floor,
            clip: self.clip,
            warmup: self.warmup,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    /// Explicit `override_dir`, then the config, then the environment, then
    /// `paris-out`.
    pub fn resolve_output_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        if let Some(d) = override_dir {
            return d.to_path_buf();
        }
        if let Some(d) = &self.output_dir {
            return d.clone();
        }
        std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("paris-out"))
    }
}

/// Parsed test-function selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunctionSpec {
    Coord(usize),
    Square(usize),
    Indicator(f64),
}

impl TestFunctionSpec {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let err = || CliError::Config(format!("bad test function '{s}' (use coord:k, square:k or indicator:v)"));
        let (kind, arg) = s.split_once(':').ok_or_else(err)?;
        match kind {
            "coord" => arg.parse().map(TestFunctionSpec::Coord).map_err(|_| err()),
            "square" => arg.parse().map(TestFunctionSpec::Square).map_err(|_| err()),
            "indicator" => arg.parse().map(TestFunctionSpec::Indicator).map_err(|_| err()),
            _ => Err(err()),
        }
    }

    pub fn eval(&self, coords: &[f64]) -> f64 {
        match *self {
            TestFunctionSpec::Coord(k) => coords.get(k).copied().unwrap_or(f64::NAN),
            TestFunctionSpec::Square(k) => coords.get(k).map_or(f64::NAN, |v| v * v),
            TestFunctionSpec::Indicator(v) => (coords.first() == Some(&v)) as u8 as f64,
        }
    }

    /// Column-safe name.
    pub fn label(&self) -> String {
        match *self {
            TestFunctionSpec::Coord(k) => format!("coord{k}"),
            TestFunctionSpec::Square(k) => format!("square{k}"),
            TestFunctionSpec::Indicator(v) => format!("ind{}", format!("{v:?}").replace(['.', '-'], "_")),
        }
    }
}

/// A model built from its configuration.
#[derive(Debug, Clone)]
pub enum BuiltModel {
    Sv(SvModel),
    Lgssm(LgssmModel),
    Hmm(HmmModel),
    Slam(SlamModel, LoopTrack),
}

impl ModelConfig {
    pub fn build(&self) -> Result<BuiltModel, CliError> {
        let cfg = |e: paris_smc::Error| CliError::Config(e.to_string());
        Ok(match self {
            ModelConfig::Sv { init_var } => {
                let mut m = SvModel::default();
                if let Some(v) = init_var {
                    if !(*v > 0.0) {
                        return Err(CliError::Config("init_var must be positive".into()));
                    }
                    m.init_var = *v;
                }
                BuiltModel::Sv(m)
            }
            ModelConfig::Lgssm {
                phi,
                sigma2,
                obs_var,
                params,
                init_var,
            } => {
                let mut m = LgssmModel::new(*phi, *sigma2, *obs_var, *params).map_err(cfg)?;
                if let Some(v) = init_var {
                    m = m.with_init_var(*v);
                }
                BuiltModel::Lgssm(m)
            }
            ModelConfig::Hmm { spec } => BuiltModel::Hmm(match spec {
                Some(s) => HmmModel::new(s.clone()).map_err(cfg)?,
                None => HmmModel::test_chain(),
            }),
            ModelConfig::Slam { landmarks, track } => {
                if !(3..=9).contains(landmarks) {
                    return Err(CliError::Config("SLAM landmarks must be between 3 and 9".into()));
                }
                let m = SlamModel::new(SlamSpec::default_layout(*landmarks)).map_err(cfg)?;
                BuiltModel::Slam(m, track.unwrap_or_default())
            }
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Sv { .. } => "sv",
            ModelConfig::Lgssm { .. } => "lgssm",
            ModelConfig::Hmm { .. } => "hmm",
            ModelConfig::Slam { .. } => "slam",
        }
    }
}

impl BuiltModel {
    /// Nominal data-generating parameter.
    pub fn nominal_parameter(&self) -> Vec<f64> {
        match self {
            BuiltModel::Sv(_) => vec![0.8, 0.1, 1.0],
            BuiltModel::Lgssm(m) => m.nominal_parameter(),
            BuiltModel::Hmm(m) => {
                if m.spec() == HmmModel::test_chain().spec() {
                    vec![HmmModel::TEST_CHAIN_THETA]
                } else {
                    m.spec().bounds.iter().map(|(lo, hi)| mid(*lo, *hi)).collect()
                }
            }
            BuiltModel::Slam(m, _) => m.true_parameter(),
        }
    }
}

fn mid(lo: f64, hi: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo + 1.0,
        (false, true) => hi - 1.0,
        (false, false) => 0.0,
    }
}

/// Named starting configurations.
pub fn preset(name: &str) -> Result<ExperimentConfig, CliError> {
    let mut c = match name {
        "sv" | "sv-ffbsm" => {
            let mut c = ExperimentConfig::new(ModelConfig::Sv { init_var: None }, 400, 100_000, 2024);
            c.replicates = 12;
            c.warmup = 1000;
            c.clip = Some(10.0);
            c.plot_every = 100;
            if name == "sv-ffbsm" {
                c.estimator = Estimator::Ffbsm;
                c.particles = 100;
            }
            c
        }
        "slam" => {
            let mut c = ExperimentConfig::new(
                ModelConfig::Slam {
                    landmarks: 9,
                    track: None,
                },
                500,
                20_000,
                31,
            );
            c.replicates = 20;
            c.step_scale = 0.01;
            c.zeta3_floor = 0.0;
            c.start = StartConfig::Gaussian { std: 1.0 };
            c.plot_every = 20;
            c
        }
        "hmm" => {
            let mut c = ExperimentConfig::new(ModelConfig::Hmm { spec: None }, 5000, 100, 7);
            c.replicates = 50;
            c.start = StartConfig::Truth;
            c.test_functions = vec!["indicator:0".into(), "indicator:1".into(), "coord:0".into()];
            c
        }
        "lgssm" => {
            let mut c = ExperimentConfig::new(
                ModelConfig::Lgssm {
                    phi: 0.8,
                    sigma2: 1.0,
                    obs_var: 1.0,
                    params: LgssmParams::Both,
                    init_var: None,
                },
                1000,
                1000,
                11,
            );
            c.test_functions = vec!["coord:0".into(), "square:0".into()];
            c
        }
        _ => {
            return Err(CliError::Config(format!(
                "unknown preset '{name}' (sv, sv-ffbsm, slam, hmm, lgssm)"
            )))
        }
    };
    c.schema_version = SCHEMA_VERSION;
    Ok(c)
}
