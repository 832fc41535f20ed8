//! Config-driven experiments over the zero-shot prediction estimators, with
//! deterministic CSV/JSON artifacts.

pub mod common;
pub mod config;
pub mod convergence;
pub mod dependence;
pub mod error;
pub mod identities;
pub mod output;
pub mod prompts;
pub mod theta;

use std::path::{Path, PathBuf};

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{LabError, LabResult};
use output::{config_hash, sidecar_path, to_pretty_json, write_text, Sidecar, Table, ARTIFACT_VERSION};

/// Result of one experiment: a CSV table or a JSON report, plus a summary
/// that goes into the sidecar.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub table: Option<Table>,
    pub report: Option<serde_json::Value>,
    pub summary: serde_json::Value,
    /// False when a check inside the run failed.
    pub passed: bool,
}

impl RunOutput {
    pub fn table(table: Table, summary: serde_json::Value) -> Self {
        Self {
            table: Some(table),
            report: None,
            summary,
            passed: true,
        }
    }

    pub fn report(report: serde_json::Value, passed: bool) -> Self {
        Self {
            table: None,
            report: Some(report),
            summary: serde_json::json!({ "all_passed": passed }),
            passed,
        }
    }
}

/// Validates the config, then runs the experiment on the current rayon pool.
pub fn run(kind: ExperimentKind, config: &ExperimentConfig) -> LabResult<RunOutput> {
    config.validate(kind)?;
    match kind {
        ExperimentKind::ThetaSweep => theta::run_theta_sweep(config),
        ExperimentKind::Convergence => convergence::run_convergence(config),
        ExperimentKind::PromptCompare => prompts::run_prompt_compare(config),
        ExperimentKind::Dependence => dependence::run_dependence(config),
        ExperimentKind::Identities => identities::run_identities(config),
    }
}

pub fn default_out(kind: ExperimentKind) -> PathBuf {
    let ext = if kind == ExperimentKind::Identities { "json" } else { "csv" };
    PathBuf::from(format!("results/{}.{ext}", kind.name()))
}

/// Writes the artifact to `out` and its sidecar next to it. Returns the
/// sidecar path.
pub fn write_outputs(kind: ExperimentKind, config: &ExperimentConfig, result: &RunOutput, out: &Path) -> LabResult<PathBuf> {
    if let Some(table) = &result.table {
        write_text(out, &table.to_csv_string())?;
    }
    if let Some(report) = &result.report {
        write_text(out, &to_pretty_json(report))?;
    }
    let sidecar = Sidecar {
        experiment: kind.name(),
        artifact_version: ARTIFACT_VERSION,
        config_sha256: config_hash(config),
        seed: config.seed,
        replicates: config.replicates,
        summary: result.summary.clone(),
    };
    let path = sidecar_path(out);
    write_text(&path, &to_pretty_json(&sidecar))?;
    Ok(path)
}
