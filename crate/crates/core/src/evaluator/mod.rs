//! The experiment pipeline run by every evaluator: hardware compliance,
//! episode execution against an agent, data validation, and the report.

mod agent;
mod compliance;
mod lab;
mod report;
mod run;
mod runlog;
mod validate;

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

pub use agent::{
    bundle_digest, AgentBundle, AgentError, AgentRef, Channel, Launcher, Manifest, ResolvedAgent, RunningAgent,
    BUILTIN_PREFIX, MANIFEST_NAME,
};
pub use compliance::{compliance_check, ComplianceReport, FieldVerdict};
pub use lab::LabProfile;
pub use report::{build_report, episode_metrics, failure_report, EpisodeSummary, EvaluationReport, Identity, ReportStatus, OPERATOR};
pub use run::{run_episode, run_experiment, EpisodeLog, EpisodeSetup, EpisodeStatus, ExperimentInfo, RunLog};
pub use runlog::{log_digest, log_files, read_run_log, write_run_log};
pub use validate::{validate_run, RunVerdict, MIN_COVERAGE};

use crate::benchmark::{BenchmarkError, BenchmarkSpec};
use crate::simworld::TileMap;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Spec(#[from] BenchmarkError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("bad lab profile: {0}")]
    Lab(String),
    #[error("run log: {0}")]
    Io(String),
}

/// Everything produced by one evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub log: RunLog,
    pub verdict: RunVerdict,
    pub report: EvaluationReport,
}

/// Inputs to [`evaluate`].
pub struct EvaluationRequest<'a> {
    pub job_id: &'a str,
    pub spec: &'a BenchmarkSpec,
    pub map: &'a Arc<TileMap>,
    pub agent: &'a ResolvedAgent,
    pub lab: &'a LabProfile,
    pub seed: u64,
    pub launcher: &'a Launcher,
    /// Where to store the run log, if anywhere.
    pub log_dir: Option<&'a Path>,
}

/// Runs, validates and reports one experiment.
pub fn evaluate(req: &EvaluationRequest<'_>) -> Result<Evaluation, EvalError> {
    let log = run_experiment(req.job_id, req.spec, req.map, req.agent, req.lab, req.seed, req.launcher);
    let verdict = validate_run(&log, req.spec);
    let digest = match req.log_dir {
        Some(dir) => write_run_log(&log, dir)?,
        None => log_digest(&log),
    };
    let report = build_report(&log, req.spec, req.map, &verdict, &digest);
    Ok(Evaluation { log, verdict, report })
}
