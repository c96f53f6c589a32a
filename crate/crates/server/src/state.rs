//! Server state and the events that change it.
//!
//! Every mutation is decided against the current [`State`] into an
//! [`Event`], which is persisted and then applied. Applying is pure, so
//! replaying a log reproduces the state exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use autolab_core::benchmark::{next_stages, rank, BenchmarkDag, BenchmarkSpec, ScoreVector, ScoringEntry};
use autolab_core::digest::canonical_json;
use autolab_core::evaluator::{EvaluationReport, ReportStatus};

/// Default claim lease in seconds.
pub const DEFAULT_LEASE: f64 = 600.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServerError {
    #[error("unknown benchmark {0:?}")]
    UnknownBenchmark(String),
    #[error("unknown job {0:?}")]
    UnknownJob(String),
    #[error("unregistered evaluator {0:?}")]
    UnknownEvaluator(String),
    #[error("agent digest mismatch: submitted {submitted}, artifact has {actual}")]
    DigestMismatch { submitted: String, actual: String },
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("lease on job {0} expired; the job was requeued")]
    LeaseExpired(String),
    #[error("job {job} is held by evaluator {holder:?}")]
    WrongEvaluator { job: String, holder: String },
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("storage: {0}")]
    Storage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Claimed,
    Running,
    Success,
    Failed,
    Invalidated,
}

impl JobStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            JobStatus::Queued => "queued",
            JobStatus::Claimed => "claimed",
            JobStatus::Running => "running",
            JobStatus::Success => "success",
            JobStatus::Failed => "failed",
            JobStatus::Invalidated => "invalidated",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Success | JobStatus::Failed | JobStatus::Invalidated)
    }

    pub fn is_held(self) -> bool {
        matches!(self, JobStatus::Claimed | JobStatus::Running)
    }
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<ReportStatus> for JobStatus {
    fn from(s: ReportStatus) -> Self {
        match s {
            ReportStatus::Success => JobStatus::Success,
            ReportStatus::Failed => JobStatus::Failed,
            ReportStatus::Invalidated => JobStatus::Invalidated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub id: String,
    pub user: String,
    /// `builtin:<name>` or the path of an agent bundle.
    pub agent: String,
    pub agent_digest: String,
    /// Benchmark or DAG id.
    pub target: String,
    pub seed: u64,
    pub created_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub submission: String,
    pub benchmark: String,
    /// DAG the job belongs to; `None` for a plain benchmark submission.
    pub dag: Option<String>,
    pub requires: Vec<String>,
    pub status: JobStatus,
    pub evaluator: Option<String>,
    pub lease_expiry: Option<f64>,
    /// Report digest once terminal.
    pub result: Option<String>,
    /// Number of times the job has been claimed.
    pub attempts: u32,
    /// Sequence number of the event that finished the job.
    pub finished_seq: Option<u64>,
}

impl Job {
    fn queued(id: String, submission: &str, spec: &BenchmarkSpec, dag: Option<&str>) -> Self {
        Self {
            id,
            submission: submission.to_string(),
            benchmark: spec.id.clone(),
            dag: dag.map(str::to_string),
            requires: spec.requires.clone(),
            status: JobStatus::Queued,
            evaluator: None,
            lease_expiry: None,
            result: None,
            attempts: 0,
            finished_seq: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    BenchmarkRegistered { spec: BenchmarkSpec },
    DagRegistered { dag: BenchmarkDag },
    EvaluatorRegistered { id: String, caps: Vec<String> },
    Submitted { submission: Submission, jobs: Vec<Job> },
    Claimed { job: String, evaluator: String, lease_expiry: f64 },
    Started { job: String, evaluator: String },
    ResultPosted { job: String, report: EvaluationReport, enqueued: Vec<Job> },
    Requeued { job: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub user: String,
    pub target: String,
    pub agent: String,
    pub agent_digest: String,
    #[serde(default)]
    pub seed: u64,
}

/// What an evaluator receives with a claimed job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub job: Job,
    pub spec: BenchmarkSpec,
    pub agent: String,
    pub agent_digest: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub submission: String,
    pub user: String,
    pub job: String,
    pub wins: usize,
    pub scores: ScoreVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardGroup {
    pub rank: usize,
    pub entries: Vec<LeaderboardEntry>,
}

/// A submission without a rankable result: `failed`, `invalidated`, or
/// `terminated:<reason>` for a disqualifying termination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnrankedEntry {
    pub submission: String,
    pub user: String,
    pub job: String,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub benchmark: String,
    pub scoring: Vec<ScoringEntry>,
    pub groups: Vec<LeaderboardGroup>,
    pub unranked: Vec<UnrankedEntry>,
}

impl Leaderboard {
    pub fn is_empty(&self) -> bool {
        self.groups.is_empty() && self.unranked.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    /// Sequence number of the last applied event.
    pub seq: u64,
    pub benchmarks: BTreeMap<String, BenchmarkSpec>,
    pub dags: BTreeMap<String, BenchmarkDag>,
    pub evaluators: BTreeMap<String, Vec<String>>,
    pub submissions: BTreeMap<String, Submission>,
    pub jobs: BTreeMap<String, Job>,
    /// Accepted reports by job id.
    pub reports: BTreeMap<String, EvaluationReport>,
}

fn job_id(n: usize) -> String {
    format!("job-{n:06}")
}

fn has_caps(job: &Job, caps: &[String]) -> bool {
    job.requires.iter().all(|r| caps.contains(r))
}

impl State {
    /// Canonical text of the whole state; equal states give equal bytes.
    pub fn snapshot(&self) -> String {
        canonical_json(self)
    }

    pub fn scoring_map(&self) -> BTreeMap<String, Vec<ScoringEntry>> {
        self.benchmarks.iter().map(|(k, s)| (k.clone(), s.scoring.clone())).collect()
    }

    fn spec(&self, id: &str) -> Result<&BenchmarkSpec, ServerError> {
        self.benchmarks.get(id).ok_or_else(|| ServerError::UnknownBenchmark(id.to_string()))
    }

    fn job(&self, id: &str) -> Result<&Job, ServerError> {
        self.jobs.get(id).ok_or_else(|| ServerError::UnknownJob(id.to_string()))
    }

    pub fn get_job(&self, id: &str) -> Result<Job, ServerError> {
        self.job(id).cloned()
    }

    /// `None` when the identical benchmark is already registered.
    pub fn decide_benchmark(&self, spec: BenchmarkSpec) -> Result<Option<Event>, ServerError> {
        autolab_core::benchmark::validate_spec(&spec).map_err(|e| ServerError::Invalid(e.join("; ")))?;
        if self.dags.contains_key(&spec.id) {
            return Err(ServerError::Conflict(format!("{:?} is already a DAG id", spec.id)));
        }
        match self.benchmarks.get(&spec.id) {
            Some(old) if *old == spec => Ok(None),
            Some(_) => Err(ServerError::Conflict(format!("benchmark {:?} already registered with other content", spec.id))),
            None => Ok(Some(Event::BenchmarkRegistered { spec })),
        }
    }

    pub fn decide_dag(&self, dag: BenchmarkDag) -> Result<Option<Event>, ServerError> {
        dag.validate().map_err(|e| ServerError::Invalid(e.to_string()))?;
        for n in &dag.nodes {
            self.spec(n)?;
        }
        dag.baseline_scores(&self.scoring_map()).map_err(|e| ServerError::Invalid(e.to_string()))?;
        if self.benchmarks.contains_key(&dag.id) {
            return Err(ServerError::Conflict(format!("{:?} is already a benchmark id", dag.id)));
        }
        match self.dags.get(&dag.id) {
            Some(old) if *old == dag => Ok(None),
            Some(_) => Err(ServerError::Conflict(format!("DAG {:?} already registered with other content", dag.id))),
            None => Ok(Some(Event::DagRegistered { dag })),
        }
    }

    pub fn decide_evaluator(&self, id: &str, caps: &[String]) -> Result<Option<Event>, ServerError> {
        if id.is_empty() {
            return Err(ServerError::Invalid("evaluator id is empty".into()));
        }
        let mut caps = caps.to_vec();
        caps.sort();
        caps.dedup();
        if self.evaluators.get(id) == Some(&caps) {
            return Ok(None);
        }
        Ok(Some(Event::EvaluatorRegistered { id: id.to_string(), caps }))
    }

    /// `actual_digest` is the digest of the artifact as found by the server.
    pub fn decide_submit(&self, req: &SubmitRequest, actual_digest: &str, now: f64) -> Result<Event, ServerError> {
        if req.agent_digest != actual_digest {
            return Err(ServerError::DigestMismatch { submitted: req.agent_digest.clone(), actual: actual_digest.into() });
        }
        let id = format!("sub-{:06}", self.submissions.len() + 1);
        let jobs = if let Some(dag) = self.dags.get(&req.target) {
            dag.roots()
                .iter()
                .enumerate()
                .map(|(i, b)| Ok(Job::queued(job_id(self.jobs.len() + 1 + i), &id, self.spec(b)?, Some(&dag.id))))
                .collect::<Result<Vec<_>, ServerError>>()?
        } else {
            vec![Job::queued(job_id(self.jobs.len() + 1), &id, self.spec(&req.target)?, None)]
        };
        let submission = Submission {
            id,
            user: req.user.clone(),
            agent: req.agent.clone(),
            agent_digest: req.agent_digest.clone(),
            target: req.target.clone(),
            seed: req.seed,
            created_at: now,
        };
        Ok(Event::Submitted { submission, jobs })
    }

    /// Requeues every held job whose lease ran out before `now`.
    pub fn decide_expired(&self, now: f64) -> Vec<Event> {
        self.jobs
            .values()
            .filter(|j| j.status.is_held() && j.lease_expiry.is_some_and(|t| t <= now))
            .map(|j| Event::Requeued { job: j.id.clone(), reason: "lease expired".into() })
            .collect()
    }

    /// Requeues every held job, for a server restart.
    pub fn decide_recovery(&self) -> Vec<Event> {
        self.jobs
            .values()
            .filter(|j| j.status.is_held())
            .map(|j| Event::Requeued { job: j.id.clone(), reason: "server restarted while job was held".into() })
            .collect()
    }

    /// The oldest queued job the evaluator can run, if any.
    pub fn decide_claim(&self, evaluator: &str, caps: Option<&[String]>, now: f64, lease: f64) -> Result<Option<Event>, ServerError> {
        let registered = self.evaluators.get(evaluator).ok_or_else(|| ServerError::UnknownEvaluator(evaluator.into()))?;
        let caps = caps.unwrap_or(registered);
        Ok(self
            .jobs
            .values()
            .find(|j| j.status == JobStatus::Queued && has_caps(j, caps))
            .map(|j| Event::Claimed { job: j.id.clone(), evaluator: evaluator.to_string(), lease_expiry: now + lease }))
    }

    pub fn assignment(&self, job: &str) -> Result<Assignment, ServerError> {
        let job = self.job(job)?;
        let sub = &self.submissions[&job.submission];
        Ok(Assignment {
            job: job.clone(),
            spec: self.spec(&job.benchmark)?.clone(),
            agent: sub.agent.clone(),
            agent_digest: sub.agent_digest.clone(),
            seed: sub.seed,
        })
    }

    fn check_holder(&self, job: &Job, evaluator: &str) -> Result<(), ServerError> {
        if job.status == JobStatus::Queued && job.attempts > 0 {
            return Err(ServerError::LeaseExpired(job.id.clone()));
        }
        if !job.status.is_held() {
            return Err(ServerError::Conflict(format!("job {} is {}", job.id, job.status)));
        }
        match &job.evaluator {
            Some(h) if h == evaluator => Ok(()),
            h => Err(ServerError::WrongEvaluator { job: job.id.clone(), holder: h.clone().unwrap_or_default() }),
        }
    }

    /// `None` when the job is already running on this evaluator.
    pub fn decide_start(&self, job: &str, evaluator: &str) -> Result<Option<Event>, ServerError> {
        let j = self.job(job)?;
        self.check_holder(j, evaluator)?;
        Ok((j.status == JobStatus::Claimed).then(|| Event::Started { job: job.into(), evaluator: evaluator.into() }))
    }

    /// `None` when the same report was already accepted for this job.
    pub fn decide_result(&self, job: &str, evaluator: &str, report: EvaluationReport) -> Result<Option<Event>, ServerError> {
        let j = self.job(job)?;
        if j.status.is_terminal() {
            return if j.result.as_deref() == Some(report.digest.as_str()) {
                Ok(None)
            } else {
                Err(ServerError::Conflict(format!("job {job} already finished with another report")))
            };
        }
        self.check_holder(j, evaluator)?;
        let sub = &self.submissions[&j.submission];
        let spec = self.spec(&j.benchmark)?;
        report.check().map_err(ServerError::Invalid)?;
        let mismatch = |what: &str| ServerError::Invalid(format!("report {what} does not match the job"));
        if report.job_id != j.id {
            return Err(mismatch("job id"));
        }
        if report.benchmark_id != j.benchmark {
            return Err(mismatch("benchmark"));
        }
        if report.spec_digest != spec.digest() {
            return Err(mismatch("benchmark digest"));
        }
        if report.agent_digest != sub.agent_digest {
            return Err(mismatch("agent digest"));
        }
        if let Some(s) = &report.scores {
            s.check(&spec.scoring).map_err(|e| ServerError::Invalid(format!("score vector: {e}")))?;
        }
        let enqueued = self.unlocked_by(j, &report)?;
        Ok(Some(Event::ResultPosted { job: job.into(), report, enqueued }))
    }

    fn rankable(report: &EvaluationReport) -> Option<&ScoreVector> {
        match (report.status, &report.disqualified) {
            (ReportStatus::Success, None) => report.scores.as_ref(),
            _ => None,
        }
    }

    /// Jobs opened for the submission once `report` is accepted for `job`.
    fn unlocked_by(&self, job: &Job, report: &EvaluationReport) -> Result<Vec<Job>, ServerError> {
        let Some(dag_id) = &job.dag else { return Ok(Vec::new()) };
        if Self::rankable(report).is_none() {
            return Ok(Vec::new());
        }
        let dag = &self.dags[dag_id];
        let mut completed: BTreeMap<String, (u64, ScoreVector)> = BTreeMap::new();
        for j in self.jobs.values().filter(|j| j.submission == job.submission && j.dag.as_ref() == Some(dag_id)) {
            if let (Some(seq), Some(s)) = (j.finished_seq, self.reports.get(&j.id).and_then(Self::rankable)) {
                if completed.get(&j.benchmark).is_none_or(|(q, _)| *q < seq) {
                    completed.insert(j.benchmark.clone(), (seq, s.clone()));
                }
            }
        }
        completed.insert(job.benchmark.clone(), (u64::MAX, Self::rankable(report).cloned().expect("checked above")));
        let completed: BTreeMap<String, ScoreVector> = completed.into_iter().map(|(k, (_, s))| (k, s)).collect();
        let scoring = self.scoring_map();
        let baselines = dag.baseline_scores(&scoring).map_err(|e| ServerError::Invalid(e.to_string()))?;
        let open = next_stages(dag, &scoring, &completed, &baselines).map_err(|e| ServerError::Invalid(e.to_string()))?;
        let existing: BTreeSet<&str> = self
            .jobs
            .values()
            .filter(|j| j.submission == job.submission)
            .map(|j| j.benchmark.as_str())
            .collect();
        let mut out = Vec::new();
        for b in open.iter().filter(|b| !existing.contains(b.as_str())) {
            out.push(Job::queued(job_id(self.jobs.len() + 1 + out.len()), &job.submission, self.spec(b)?, Some(dag_id)));
        }
        Ok(out)
    }

    /// Applies an event. Errors mean the event does not fit the state,
    /// which for a replayed log is corruption.
    pub fn apply(&mut self, seq: u64, event: Event) -> Result<(), ServerError> {
        let bad = |m: String| ServerError::Storage(format!("event {seq}: {m}"));
        match event {
            Event::BenchmarkRegistered { spec } => {
                self.benchmarks.insert(spec.id.clone(), spec);
            }
            Event::DagRegistered { dag } => {
                self.dags.insert(dag.id.clone(), dag);
            }
            Event::EvaluatorRegistered { id, caps } => {
                self.evaluators.insert(id, caps);
            }
            Event::Submitted { submission, jobs } => {
                if self.submissions.contains_key(&submission.id) {
                    return Err(bad(format!("duplicate submission {}", submission.id)));
                }
                self.insert_jobs(jobs).map_err(bad)?;
                self.submissions.insert(submission.id.clone(), submission);
            }
            Event::Claimed { job, evaluator, lease_expiry } => {
                let j = self.jobs.get_mut(&job).ok_or_else(|| bad(format!("unknown job {job}")))?;
                if j.status != JobStatus::Queued {
                    return Err(bad(format!("claim of {job} while {}", j.status)));
                }
                j.status = JobStatus::Claimed;
                j.evaluator = Some(evaluator);
                j.lease_expiry = Some(lease_expiry);
                j.attempts += 1;
            }
            Event::Started { job, evaluator } => {
                let j = self.jobs.get_mut(&job).ok_or_else(|| bad(format!("unknown job {job}")))?;
                if j.status != JobStatus::Claimed || j.evaluator.as_deref() != Some(evaluator.as_str()) {
                    return Err(bad(format!("start of {job} while {}", j.status)));
                }
                j.status = JobStatus::Running;
            }
            Event::ResultPosted { job, report, enqueued } => {
                let j = self.jobs.get_mut(&job).ok_or_else(|| bad(format!("unknown job {job}")))?;
                if !j.status.is_held() {
                    return Err(bad(format!("result for {job} while {}", j.status)));
                }
                j.status = report.status.into();
                j.lease_expiry = None;
                j.result = Some(report.digest.clone());
                j.finished_seq = Some(seq);
                self.reports.insert(job, report);
                self.insert_jobs(enqueued).map_err(bad)?;
            }
            Event::Requeued { job, .. } => {
                let j = self.jobs.get_mut(&job).ok_or_else(|| bad(format!("unknown job {job}")))?;
                if !j.status.is_held() {
                    return Err(bad(format!("requeue of {job} while {}", j.status)));
                }
                j.status = JobStatus::Queued;
                j.evaluator = None;
                j.lease_expiry = None;
            }
        }
        self.seq = seq;
        Ok(())
    }

    fn insert_jobs(&mut self, jobs: Vec<Job>) -> Result<(), String> {
        for j in jobs {
            if self.jobs.contains_key(&j.id) {
                return Err(format!("duplicate job {}", j.id));
            }
            self.jobs.insert(j.id.clone(), j);
        }
        Ok(())
    }

    /// Ranks the latest rankable report of every submission; submissions
    /// with none are listed by the status of their latest finished job.
    pub fn leaderboard(&self, benchmark: &str) -> Result<Leaderboard, ServerError> {
        let spec = self.spec(benchmark)?;
        let mut latest_ranked: BTreeMap<&str, (u64, &Job, &ScoreVector)> = BTreeMap::new();
        let mut latest_any: BTreeMap<&str, (u64, &Job, &EvaluationReport)> = BTreeMap::new();
        for j in self.jobs.values().filter(|j| j.benchmark == benchmark) {
            let (Some(seq), Some(r)) = (j.finished_seq, self.reports.get(&j.id)) else { continue };
            if latest_any.get(j.submission.as_str()).is_none_or(|(q, ..)| *q < seq) {
                latest_any.insert(&j.submission, (seq, j, r));
            }
            if let Some(s) = Self::rankable(r) {
                if latest_ranked.get(j.submission.as_str()).is_none_or(|(q, ..)| *q < seq) {
                    latest_ranked.insert(&j.submission, (seq, j, s));
                }
            }
        }
        let entries: Vec<(String, ScoreVector)> =
            latest_ranked.iter().map(|(sub, (_, _, s))| (sub.to_string(), (*s).clone())).collect();
        let groups = rank(&entries, &spec.scoring).map_err(|e| ServerError::Storage(format!("stored scores: {e}")))?;
        let groups = groups
            .into_iter()
            .map(|g| LeaderboardGroup {
                rank: g.rank,
                entries: g
                    .entries
                    .into_iter()
                    .map(|e| LeaderboardEntry {
                        user: self.submissions[&e.id].user.clone(),
                        job: latest_ranked[e.id.as_str()].1.id.clone(),
                        submission: e.id,
                        wins: e.wins,
                        scores: e.scores,
                    })
                    .collect(),
            })
            .collect();
        let unranked = latest_any
            .iter()
            .filter(|(sub, _)| !latest_ranked.contains_key(*sub))
            .map(|(sub, (_, j, r))| UnrankedEntry {
                submission: sub.to_string(),
                user: self.submissions[*sub].user.clone(),
                job: j.id.clone(),
                status: match (&r.disqualified, r.status) {
                    (Some(reason), ReportStatus::Success) => format!("terminated:{reason}"),
                    (_, s) => s.as_str().to_string(),
                },
            })
            .collect();
        Ok(Leaderboard { benchmark: benchmark.to_string(), scoring: spec.scoring.clone(), groups, unranked })
    }
}
