//! Evaluator worker: polls the server for jobs, runs them through the
//! evaluation pipeline and posts the reports.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use autolab_core::evaluator::{
    evaluate, failure_report, AgentRef, EvaluationReport, EvaluationRequest, ExperimentInfo, LabProfile, Launcher,
    ResolvedAgent,
};

use crate::client::{Client, ClientError};
use crate::state::Assignment;

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub evaluator_id: String,
    pub caps: Vec<String>,
    pub poll_interval: Duration,
    pub lab: LabProfile,
    pub launcher: Launcher,
    /// Run logs are written to `<log_root>/<job id>` when set.
    pub log_root: Option<PathBuf>,
    /// Stop after this many jobs.
    pub max_jobs: Option<usize>,
    /// How long to keep retrying when the server cannot be reached.
    pub retry_for: Duration,
}

impl WorkerConfig {
    pub fn new(evaluator_id: &str, caps: &[&str]) -> Self {
        Self {
            evaluator_id: evaluator_id.to_string(),
            caps: caps.iter().map(|c| c.to_string()).collect(),
            poll_interval: Duration::from_secs(2),
            lab: LabProfile::default(),
            launcher: Launcher::default(),
            log_root: None,
            max_jobs: None,
            retry_for: Duration::from_secs(600),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorkerStats {
    pub jobs_run: usize,
    pub reports_accepted: usize,
    pub reports_rejected: usize,
}

/// Runs one assignment to a sealed report. Never fails: problems with the
/// agent or the benchmark become a failed report.
pub fn execute(assignment: &Assignment, cfg: &WorkerConfig) -> EvaluationReport {
    let job = &assignment.job;
    let spec = &assignment.spec;
    let info = ExperimentInfo {
        job_id: job.id.clone(),
        benchmark_id: spec.id.clone(),
        spec_digest: spec.digest(),
        agent_digest: assignment.agent_digest.clone(),
        lab_id: cfg.lab.id.clone(),
        master_seed: assignment.seed,
    };
    let agent = assignment
        .agent
        .parse::<AgentRef>()
        .and_then(|r| ResolvedAgent::resolve(&r))
        .and_then(|a| match &a {
            ResolvedAgent::Bundle(b) => b.verify(&assignment.agent_digest).map(|_| a),
            ResolvedAgent::Baseline if a.digest() != assignment.agent_digest => {
                Err(autolab_core::evaluator::AgentError::DigestMismatch {
                    expected: assignment.agent_digest.clone(),
                    got: a.digest(),
                })
            }
            ResolvedAgent::Baseline => Ok(a),
        });
    let agent = match agent {
        Ok(a) => a,
        Err(e) => return failure_report(info, &format!("cannot load agent: {e}")),
    };
    let map = match spec.load_map(None) {
        Ok(m) => Arc::new(m),
        Err(e) => return failure_report(info, &format!("cannot load map: {e}")),
    };
    let log_dir = cfg.log_root.as_ref().map(|r| r.join(&job.id));
    let req = EvaluationRequest {
        job_id: &job.id,
        spec,
        map: &map,
        agent: &agent,
        lab: &cfg.lab,
        seed: assignment.seed,
        launcher: &cfg.launcher,
        log_dir: log_dir.as_deref(),
    };
    match evaluate(&req) {
        Ok(ev) => ev.report,
        Err(e) => failure_report(info, &format!("evaluation failed: {e}")),
    }
}

/// Repeats `op` while the server is unreachable, up to `cfg.retry_for`.
fn with_retry<T>(
    cfg: &WorkerConfig,
    stop: &AtomicBool,
    mut op: impl FnMut() -> Result<T, ClientError>,
) -> Result<T, ClientError> {
    let deadline = Instant::now() + cfg.retry_for;
    let mut wait = Duration::from_millis(100);
    loop {
        match op() {
            Err(ClientError::Network(e)) if Instant::now() < deadline && !stop.load(Ordering::Relaxed) => {
                log::warn!("server unreachable ({e}); retrying in {wait:?}");
                thread::sleep(wait);
                wait = (wait * 2).min(cfg.poll_interval.max(Duration::from_millis(100)));
            }
            other => return other,
        }
    }
}

fn sleep_unless_stopped(d: Duration, stop: &AtomicBool) {
    let end = Instant::now() + d;
    while !stop.load(Ordering::Relaxed) {
        let now = Instant::now();
        if now >= end {
            break;
        }
        thread::sleep((end - now).min(Duration::from_millis(50)));
    }
}

/// Polls and runs jobs until `stop` is set or `max_jobs` is reached.
/// Authentication failures and an unreachable server end the loop with
/// an error; rejected reports are logged and skipped.
pub fn run_worker(client: &Client, cfg: &WorkerConfig, stop: &AtomicBool) -> Result<WorkerStats, ClientError> {
    let mut stats = WorkerStats::default();
    let id = cfg.evaluator_id.as_str();
    with_retry(cfg, stop, || client.register_evaluator(id, &cfg.caps))?;
    log::info!("evaluator {id} registered with caps {:?}", cfg.caps);
    while !stop.load(Ordering::Relaxed) && cfg.max_jobs.is_none_or(|m| stats.jobs_run < m) {
        let claimed = match with_retry(cfg, stop, || client.claim(id, Some(&cfg.caps))) {
            // a restarted server may have lost the registration
            Err(ClientError::Http { status: 403, .. }) => {
                with_retry(cfg, stop, || client.register_evaluator(id, &cfg.caps))?;
                continue;
            }
            other => other?.body,
        };
        let Some(assignment) = claimed else {
            sleep_unless_stopped(cfg.poll_interval, stop);
            continue;
        };
        let job = assignment.job.id.clone();
        match with_retry(cfg, stop, || client.start(&job, id)) {
            Ok(_) => {}
            Err(ClientError::Http { status, message }) => {
                log::warn!("job {job} could not be started ({status}): {message}");
                continue;
            }
            Err(e) => return Err(e),
        }
        log::info!("running {job} ({} for {})", assignment.spec.id, assignment.agent);
        let report = execute(&assignment, cfg);
        stats.jobs_run += 1;
        match with_retry(cfg, stop, || client.post_result(&job, id, &report)) {
            Ok(r) => {
                stats.reports_accepted += 1;
                log::info!("job {job} finished as {}", r.body.status);
            }
            Err(ClientError::Http { status, message }) => {
                stats.reports_rejected += 1;
                log::warn!("report for {job} rejected ({status}): {message}");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(stats)
}
