use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::run::{EpisodeStatus, ExperimentInfo, RunLog};
use super::validate::RunVerdict;
use crate::benchmark::{BenchmarkSpec, ScoreVector};
use crate::digest::canonical_digest;
use crate::metrics::{binned_stats, lane_series, MetricsError, DEFAULT_BIN_WIDTH};
use crate::simworld::{TileMap, Trajectory};

pub const OPERATOR: &str = "auto";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStatus {
    Success,
    Failed,
    Invalidated,
}

impl ReportStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ReportStatus::Success => "success",
            ReportStatus::Failed => "failed",
            ReportStatus::Invalidated => "invalidated",
        }
    }
}

/// Who ran the experiment, where, and on what hardware.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identity {
    pub experiment_id: String,
    pub lab_id: String,
    pub operator_id: String,
    pub compliance_digest: String,
}

impl Identity {
    pub fn is_complete(&self) -> bool {
        [&self.experiment_id, &self.lab_id, &self.operator_id, &self.compliance_digest]
            .iter()
            .all(|s| !s.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub index: u32,
    pub seed: u64,
    pub status: EpisodeStatus,
    pub termination: Option<String>,
    pub duration: f64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub job_id: String,
    pub benchmark_id: String,
    pub spec_digest: String,
    pub agent_digest: String,
    pub status: ReportStatus,
    pub diagnostics: Vec<String>,
    pub episodes: Vec<EpisodeSummary>,
    /// Benchmark metrics averaged over episodes.
    pub metrics: BTreeMap<String, f64>,
    pub scores: Option<ScoreVector>,
    /// Termination reason that bars the run from ranking.
    pub disqualified: Option<String>,
    /// Digest of the run log this report summarizes.
    pub raw_log: String,
    pub identity: Identity,
    pub digest: String,
}

impl EvaluationReport {
    pub fn compute_digest(&self) -> String {
        let mut copy = self.clone();
        copy.digest.clear();
        canonical_digest(&copy)
    }

    pub fn seal(mut self) -> Self {
        self.digest = self.compute_digest();
        self
    }

    /// Structural checks a server applies before accepting a report.
    pub fn check(&self) -> Result<(), String> {
        if !self.identity.is_complete() {
            return Err("identity block incomplete".into());
        }
        if self.digest != self.compute_digest() {
            return Err("report digest does not match contents".into());
        }
        if self.status == ReportStatus::Success && self.scores.is_none() {
            return Err("successful report without scores".into());
        }
        Ok(())
    }
}

/// Lane metrics of one trajectory: time survived, arc length covered,
/// and signed and absolute mean offsets along the lane.
pub fn episode_metrics(traj: &Trajectory, map: &TileMap, duration: f64) -> Result<BTreeMap<String, f64>, MetricsError> {
    let series = lane_series(traj, map)?;
    let distance = series.samples.last().map_or(0.0, |p| p.s);
    let (mpd_mean, mpd_abs, mod_mean, mod_abs) = match binned_stats(std::slice::from_ref(&series), DEFAULT_BIN_WIDTH) {
        Ok(b) => {
            let n = b.bins.len() as f64;
            (
                b.mpd_mean,
                b.bins.iter().map(|x| x.d_mean.abs()).sum::<f64>() / n,
                b.mod_mean,
                b.bins.iter().map(|x| x.phi_mean.abs()).sum::<f64>() / n,
            )
        }
        // robot never moved along the lane: plain sample averages
        Err(MetricsError::NoOverlap) => {
            let n = series.len() as f64;
            let avg = |f: &dyn Fn(&crate::metrics::LaneSample) -> f64| series.samples.iter().map(f).sum::<f64>() / n;
            (avg(&|p| p.d), avg(&|p| p.d.abs()), avg(&|p| p.phi), avg(&|p| p.phi.abs()))
        }
        Err(e) => return Err(e),
    };
    Ok([
        ("survival_time", duration),
        ("distance", distance),
        ("mpd_mean", mpd_mean),
        ("mpd_abs", mpd_abs),
        ("mod_mean", mod_mean),
        ("mod_abs", mod_abs),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect())
}

fn identity(log: &RunLog) -> Identity {
    let e = &log.experiment;
    let experiment = canonical_digest(&(&e.job_id, &e.spec_digest, &e.agent_digest, &e.lab_id, e.master_seed));
    let compliance: Vec<&str> = log.episodes.iter().map(|ep| ep.compliance.digest.as_str()).collect();
    Identity {
        experiment_id: experiment[..16].to_string(),
        lab_id: e.lab_id.clone(),
        operator_id: OPERATOR.to_string(),
        compliance_digest: canonical_digest(&compliance),
    }
}

/// Summarizes a run. Metrics come from the localization estimate, never
/// from ground truth.
pub fn build_report(log: &RunLog, spec: &BenchmarkSpec, map: &TileMap, verdict: &RunVerdict, raw_log: &str) -> EvaluationReport {
    let mut diagnostics = Vec::new();
    let mut status = ReportStatus::Success;
    for ep in log.episodes.iter().filter(|e| e.status == EpisodeStatus::AgentFailed) {
        status = ReportStatus::Failed;
        diagnostics.push(format!("episode {}: agent failed: {}", ep.index, ep.error.as_deref().unwrap_or("")));
        let tail: Vec<&str> = ep.agent_stderr.lines().rev().take(5).collect();
        for line in tail.into_iter().rev() {
            diagnostics.push(format!("episode {} stderr: {line}", ep.index));
        }
    }
    if status == ReportStatus::Success {
        if let RunVerdict::Invalidated(reasons) = verdict {
            status = ReportStatus::Invalidated;
            diagnostics.extend(reasons.iter().cloned());
        }
    }
    let mut episodes = Vec::new();
    for ep in &log.episodes {
        let metrics = if ep.status == EpisodeStatus::Completed {
            match episode_metrics(&ep.estimate, map, ep.duration) {
                Ok(m) => m,
                Err(e) => {
                    if status == ReportStatus::Success {
                        status = ReportStatus::Failed;
                    }
                    diagnostics.push(format!("episode {}: metric computation failed: {e}", ep.index));
                    BTreeMap::new()
                }
            }
        } else {
            BTreeMap::new()
        };
        episodes.push(EpisodeSummary {
            index: ep.index,
            seed: ep.seed,
            status: ep.status,
            termination: ep.termination.map(|t| t.as_str().to_string()),
            duration: ep.duration,
            metrics,
        });
    }
    let mut metrics = BTreeMap::new();
    let mut scores = None;
    let mut disqualified = None;
    if status == ReportStatus::Success {
        for m in &spec.metrics {
            let vals: Vec<f64> = episodes.iter().filter_map(|e| e.metrics.get(m).copied()).collect();
            if !vals.is_empty() {
                metrics.insert(m.clone(), vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        match ScoreVector::from_metrics(&metrics, &spec.scoring) {
            Ok(s) => scores = Some(s),
            Err(e) => {
                status = ReportStatus::Failed;
                diagnostics.push(format!("cannot score run: {e}"));
            }
        }
        disqualified = log
            .episodes
            .iter()
            .filter_map(|e| e.termination)
            .find(|t| spec.disqualifies(*t))
            .map(|t| t.as_str().to_string());
    }
    EvaluationReport {
        job_id: log.experiment.job_id.clone(),
        benchmark_id: log.experiment.benchmark_id.clone(),
        spec_digest: log.experiment.spec_digest.clone(),
        agent_digest: log.experiment.agent_digest.clone(),
        status,
        diagnostics,
        episodes,
        metrics,
        scores,
        disqualified,
        raw_log: raw_log.to_string(),
        identity: identity(log),
        digest: String::new(),
    }
    .seal()
}

/// Report for an experiment that could not be run at all, for example
/// because the agent bundle is missing or does not match its digest.
pub fn failure_report(experiment: ExperimentInfo, reason: &str) -> EvaluationReport {
    let log = RunLog { experiment, episodes: Vec::new() };
    EvaluationReport {
        job_id: log.experiment.job_id.clone(),
        benchmark_id: log.experiment.benchmark_id.clone(),
        spec_digest: log.experiment.spec_digest.clone(),
        agent_digest: log.experiment.agent_digest.clone(),
        status: ReportStatus::Failed,
        diagnostics: vec![reason.to_string()],
        episodes: Vec::new(),
        metrics: BTreeMap::new(),
        scores: None,
        disqualified: None,
        raw_log: canonical_digest(&log),
        identity: identity(&log),
        digest: String::new(),
    }
    .seal()
}
