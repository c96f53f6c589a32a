use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use autolab_core::benchmark::{BenchmarkDag, BenchmarkSpec};
use autolab_core::evaluator::{AgentRef, EvaluationReport, ResolvedAgent};

use crate::eventlog::{EventLog, Truncation};
use crate::state::{
    Assignment, Event, Job, JobStatus, Leaderboard, ServerError, State, SubmitRequest, DEFAULT_LEASE,
};

/// Seconds since the Unix epoch.
pub type Clock = Arc<dyn Fn() -> f64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64()))
}

struct Inner {
    state: State,
    log: EventLog,
}

/// Server state behind a single writer. Every change is appended to the
/// event log before it is applied and acknowledged.
pub struct Store {
    inner: Mutex<Inner>,
    clock: Clock,
    lease: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub replayed: u64,
    pub truncated: Option<Truncation>,
    pub requeued: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PostOutcome {
    pub status: JobStatus,
    /// The report had already been accepted.
    pub duplicate: bool,
    /// Jobs opened by this result.
    pub enqueued: Vec<String>,
}

fn storage(e: std::io::Error) -> ServerError {
    ServerError::Storage(e.to_string())
}

/// Digest of the artifact a submission names, as the server sees it.
pub fn artifact_digest(agent: &str) -> Result<String, ServerError> {
    let r: AgentRef = agent.parse().map_err(|e| ServerError::Invalid(format!("agent: {e}")))?;
    ResolvedAgent::resolve(&r)
        .map(|a| a.digest())
        .map_err(|e| ServerError::Invalid(format!("agent: {e}")))
}

impl Store {
    /// Replays the log at `path`, then requeues every job that was held
    /// when the previous server stopped.
    pub fn open(path: &Path, clock: Clock) -> Result<(Self, Recovery), ServerError> {
        let (log, events, truncated) = EventLog::open(path).map_err(storage)?;
        let mut state = State::default();
        for (i, ev) in events.into_iter().enumerate() {
            state.apply(i as u64 + 1, ev)?;
        }
        let replayed = state.seq;
        let store = Self { inner: Mutex::new(Inner { state, log }), clock, lease: DEFAULT_LEASE };
        let requeue = store.lock().state.decide_recovery();
        let requeued = requeue
            .iter()
            .map(|e| match e {
                Event::Requeued { job, .. } => job.clone(),
                _ => unreachable!(),
            })
            .collect();
        store.commit(&mut store.lock(), requeue)?;
        Ok((store, Recovery { replayed, truncated, requeued }))
    }

    pub fn with_lease(mut self, seconds: f64) -> Self {
        self.lease = seconds;
        self
    }

    /// See [`EventLog::without_sync`].
    pub fn without_sync(self) -> Self {
        let inner = self.inner.into_inner().unwrap_or_else(|p| p.into_inner());
        Self {
            inner: Mutex::new(Inner { state: inner.state, log: inner.log.without_sync() }),
            clock: self.clock,
            lease: self.lease,
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn now(&self) -> f64 {
        (self.clock)()
    }

    fn commit(&self, inner: &mut Inner, events: Vec<Event>) -> Result<u64, ServerError> {
        for ev in events {
            let seq = inner.log.append(&ev).map_err(storage)?;
            inner.state.apply(seq, ev)?;
        }
        Ok(inner.state.seq)
    }

    fn sweep(&self, inner: &mut Inner) -> Result<(), ServerError> {
        let expired = inner.state.decide_expired(self.now());
        for ev in &expired {
            if let Event::Requeued { job, .. } = ev {
                log::info!("lease of {job} expired; requeued");
            }
        }
        self.commit(inner, expired).map(|_| ())
    }

    pub fn seq(&self) -> u64 {
        self.lock().state.seq
    }

    pub fn snapshot(&self) -> String {
        self.lock().state.snapshot()
    }

    pub fn state(&self) -> State {
        self.lock().state.clone()
    }

    /// Requeues jobs whose lease has run out.
    pub fn expire_leases(&self) -> Result<u64, ServerError> {
        let mut inner = self.lock();
        self.sweep(&mut inner)?;
        Ok(inner.state.seq)
    }

    pub fn register_benchmark(&self, spec: BenchmarkSpec) -> Result<u64, ServerError> {
        let mut inner = self.lock();
        let ev = inner.state.decide_benchmark(spec)?;
        self.commit(&mut inner, ev.into_iter().collect())
    }

    pub fn register_dag(&self, dag: BenchmarkDag) -> Result<u64, ServerError> {
        let mut inner = self.lock();
        let ev = inner.state.decide_dag(dag)?;
        self.commit(&mut inner, ev.into_iter().collect())
    }

    pub fn register_evaluator(&self, id: &str, caps: &[String]) -> Result<u64, ServerError> {
        let mut inner = self.lock();
        let ev = inner.state.decide_evaluator(id, caps)?;
        self.commit(&mut inner, ev.into_iter().collect())
    }

    /// Verifies the artifact digest and queues the first jobs.
    pub fn submit(&self, req: &SubmitRequest) -> Result<(Vec<String>, u64), ServerError> {
        let actual = artifact_digest(&req.agent)?;
        let mut inner = self.lock();
        let ev = inner.state.decide_submit(req, &actual, self.now())?;
        let ids = match &ev {
            Event::Submitted { jobs, .. } => jobs.iter().map(|j| j.id.clone()).collect(),
            _ => unreachable!(),
        };
        let seq = self.commit(&mut inner, vec![ev])?;
        Ok((ids, seq))
    }

    pub fn claim(&self, evaluator: &str, caps: Option<&[String]>) -> Result<(Option<Assignment>, u64), ServerError> {
        let mut inner = self.lock();
        self.sweep(&mut inner)?;
        let Some(ev) = inner.state.decide_claim(evaluator, caps, self.now(), self.lease)? else {
            return Ok((None, inner.state.seq));
        };
        let job = match &ev {
            Event::Claimed { job, .. } => job.clone(),
            _ => unreachable!(),
        };
        let seq = self.commit(&mut inner, vec![ev])?;
        Ok((Some(inner.state.assignment(&job)?), seq))
    }

    pub fn start(&self, job: &str, evaluator: &str) -> Result<(Job, u64), ServerError> {
        let mut inner = self.lock();
        self.sweep(&mut inner)?;
        let ev = inner.state.decide_start(job, evaluator)?;
        let seq = self.commit(&mut inner, ev.into_iter().collect())?;
        Ok((inner.state.get_job(job)?, seq))
    }

    pub fn post_result(&self, job: &str, evaluator: &str, report: EvaluationReport) -> Result<(PostOutcome, u64), ServerError> {
        let mut inner = self.lock();
        self.sweep(&mut inner)?;
        let ev = inner.state.decide_result(job, evaluator, report)?;
        let (duplicate, enqueued) = match &ev {
            None => (true, Vec::new()),
            Some(Event::ResultPosted { enqueued, .. }) => (false, enqueued.iter().map(|j| j.id.clone()).collect()),
            Some(_) => unreachable!(),
        };
        let seq = self.commit(&mut inner, ev.into_iter().collect())?;
        let status = inner.state.get_job(job)?.status;
        Ok((PostOutcome { status, duplicate, enqueued }, seq))
    }

    pub fn job(&self, id: &str) -> Result<(Job, u64), ServerError> {
        let inner = self.lock();
        Ok((inner.state.get_job(id)?, inner.state.seq))
    }

    pub fn leaderboard(&self, benchmark: &str) -> Result<(Leaderboard, u64), ServerError> {
        let inner = self.lock();
        Ok((inner.state.leaderboard(benchmark)?, inner.state.seq))
    }
}
