//! Paired comparison of two estimator configurations on the same data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ModelConfig};
use crate::error::CliError;
use crate::run::{run, Command, ReplicateStatus, RunArtifact};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub replicate: usize,
    pub a: Option<Vec<f64>>,
    pub b: Option<Vec<f64>>,
}

/// Full-scale reference replicate variances of the stochastic-volatility
/// study, kept for context. They are not reproduced by desk-scale runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceVariances {
    pub paris: [f64; 3],
    pub ffbsm: [f64; 3],
    pub reproduced: bool,
}

pub const SV_REFERENCE: ReferenceVariances = ReferenceVariances {
    paris: [0.069e-4, 0.181e-4, 0.095e-4],
    ffbsm: [0.054e-3, 0.164e-3, 0.063e-3],
    reproduced: false,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub schema_version: u32,
    pub command: Command,
    pub value_columns: Vec<String>,
    pub paired: Vec<PairedRow>,
    pub variance_a: Option<Vec<f64>>,
    pub variance_b: Option<Vec<f64>>,
    /// `variance_a / variance_b` componentwise.
    pub variance_ratio: Option<Vec<f64>>,
    pub median_step_seconds_a: Option<f64>,
    pub median_step_seconds_b: Option<f64>,
    /// Per-step median wall time of A over that of B.
    pub time_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_variances: Option<ReferenceVariances>,
}

fn check_compatible(a: &ExperimentConfig, b: &ExperimentConfig) -> Result<(), CliError> {
    let fail = |what: &str| Err(CliError::Config(format!("compared configs differ in {what}")));
    if a.model != b.model {
        return fail("model");
    }
    if a.data_seed() != b.data_seed() {
        return fail("data seed");
    }
    if a.horizon != b.horizon {
        return fail("horizon");
    }
    if a.true_parameter != b.true_parameter {
        return fail("true parameter");
    }
    Ok(())
}

/// Runs A into `out_dir/a` and B into `out_dir/b` and writes
/// `out_dir/compare.json`.
pub fn compare(
    command: Command,
    a: &ExperimentConfig,
    b: &ExperimentConfig,
    out_dir: &Path,
) -> Result<(CompareReport, RunArtifact, RunArtifact), CliError> {
    check_compatible(a, b)?;
    let ra = run(command, a, &out_dir.join("a"))?;
    let rb = run(command, b, &out_dir.join("b"))?;
    let (sa, sb) = (&ra.summary, &rb.summary);
    let n = sa.replicates.len().max(sb.replicates.len());
    let pick = |s: &crate::run::Summary, r: usize| {
        s.replicates
            .get(r)
            .filter(|x| x.status == ReplicateStatus::Ok)
            .map(|x| x.final_value.clone())
    };
    let paired = (0..n)
        .map(|r| PairedRow {
            replicate: r,
            a: pick(sa, r),
            b: pick(sb, r),
        })
        .collect();
    let variance_ratio = match (&sa.final_variance, &sb.final_variance) {
        (Some(va), Some(vb)) => Some(va.iter().zip(vb).map(|(x, y)| x / y).collect()),
        _ => None,
    };
    let time_ratio = match (sa.median_step_seconds, sb.median_step_seconds) {
        (Some(x), Some(y)) if y > 0.0 => Some(x / y),
        _ => None,
    };
    let report = CompareReport {
        schema_version: crate::config::SCHEMA_VERSION,
        command,
        value_columns: sa.value_columns.clone(),
        paired,
        variance_a: sa.final_variance.clone(),
        variance_b: sb.final_variance.clone(),
        variance_ratio,
        median_step_seconds_a: sa.median_step_seconds,
        median_step_seconds_b: sb.median_step_seconds,
        time_ratio,
        reference_variances: (matches!(a.model, ModelConfig::Sv { .. }) && command == Command::Rml)
            .then_some(SV_REFERENCE),
    };
    std::fs::write(
        out_dir.join("compare.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok((report, ra, rb))
}
