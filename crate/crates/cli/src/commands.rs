use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use clap::Args;

use autolab_core::benchmark::BenchmarkSpec;
use autolab_core::evaluator::{
    evaluate, AgentError, AgentRef, EvalError, EvaluationReport, EvaluationRequest, LabProfile, Launcher, ReportStatus,
    ResolvedAgent,
};
use autolab_core::study::{run_study, StudyConfig, StudyData, StudyError, StudyKind, StudyResult};
use autolab_server::{
    artifact_digest, register_builtin_benchmarks, run_worker, spawn_server, system_clock, Client, Leaderboard, Store,
    SubmitRequest, WorkerConfig,
};

use crate::exit::{Fail, AGENT, FAILURE, OK, SPEC};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Challenges server address, `host:port` or a URL.
    #[arg(long, global = true, env = "AUTOLAB_SERVER_ADDR", default_value = "127.0.0.1:8750")]
    pub server: String,
    /// Bearer token for the server.
    #[arg(long, global = true, env = "AUTOLAB_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    /// Master seed of evaluations and studies.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Where run logs, server data or study output go.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

impl Global {
    pub fn client(&self) -> Client {
        Client::new(&self.server, self.token.clone())
    }
}

/// Parses `2s`, `500ms`, `1m` or a bare number of seconds.
pub fn parse_duration(s: &str) -> Result<Duration, String> {
    let s = s.trim();
    let (num, scale) = if let Some(v) = s.strip_suffix("ms") {
        (v, 1e-3)
    } else if let Some(v) = s.strip_suffix('s') {
        (v, 1.0)
    } else if let Some(v) = s.strip_suffix('m') {
        (v, 60.0)
    } else {
        (s, 1.0)
    };
    let v: f64 = num.trim().parse().map_err(|_| format!("bad duration {s:?}"))?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(format!("bad duration {s:?}"));
    }
    Ok(Duration::from_secs_f64(v * scale))
}

/// Directories searched for bare agent entry commands: the one holding
/// this executable, so sibling binaries such as `autolab-agent` resolve.
pub fn launcher() -> Launcher {
    let mut l = Launcher::default();
    if let Some(dir) = std::env::current_exe().ok().and_then(|p| p.parent().map(Path::to_path_buf)) {
        l.search_path.push(dir);
    }
    l
}

fn load_lab(path: Option<&Path>) -> Result<LabProfile, Fail> {
    match path {
        None => Ok(LabProfile::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Fail::spec(format!("{}: {e}", p.display())))?;
            LabProfile::from_toml(&text).map_err(|e| Fail::spec(format!("{}: {e}", p.display())))
        }
    }
}

/// Agent references sent to a server are made absolute so the evaluators
/// find the bundle regardless of their working directory.
fn absolute_agent(agent: &str) -> Result<String, Fail> {
    match agent.parse::<AgentRef>() {
        Ok(AgentRef::Bundle(p)) => {
            let abs = fs::canonicalize(&p).map_err(|e| Fail::new(AGENT, format!("{}: {e}", p.display())))?;
            Ok(abs.display().to_string())
        }
        Ok(AgentRef::Builtin(_)) => Ok(agent.to_string()),
        Err(e) => Err(Fail::new(AGENT, e.to_string())),
    }
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:8750")]
    pub addr: String,
    /// Directory of the event log; defaults to --out-dir, then `autolab-data`.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Job lease in seconds.
    #[arg(long, default_value_t = autolab_server::DEFAULT_LEASE)]
    pub lease: f64,
    /// Skip fsync after each event (faster, loses the tail on power failure).
    #[arg(long)]
    pub no_fsync: bool,
}

pub fn serve(g: &Global, a: &ServeArgs) -> Result<u8, Fail> {
    let dir = a.data_dir.clone().or_else(|| g.out_dir.clone()).unwrap_or_else(|| PathBuf::from("autolab-data"));
    fs::create_dir_all(&dir).map_err(|e| Fail::other(format!("{}: {e}", dir.display())))?;
    let (mut store, rec) = Store::open(&dir.join("events.jsonl"), system_clock()).map_err(Fail::other)?;
    store = store.with_lease(a.lease);
    if a.no_fsync {
        store = store.without_sync();
    }
    log::info!("replayed {} events, requeued {} held jobs", rec.replayed, rec.requeued.len());
    if let Some(t) = &rec.truncated {
        log::warn!("event log tail dropped at seq {}: {}", t.at_seq, t.reason);
    }
    register_builtin_benchmarks(&store).map_err(Fail::other)?;
    let tokens: Vec<String> = g.token.iter().cloned().collect();
    let server = spawn_server(&a.addr, Arc::new(store), tokens).map_err(|e| Fail::other(format!("{}: {e}", a.addr)))?;
    println!("listening on {}", server.url());
    let _ = std::io::stdout().flush();
    loop {
        std::thread::park();
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvaluatorArgs {
    /// Evaluator id; defaults to `evaluator-<pid>`.
    #[arg(long)]
    pub id: Option<String>,
    /// Comma-separated capability tags.
    #[arg(long, default_value = "sim")]
    pub caps: String,
    #[arg(long, default_value = "2s", value_parser = parse_duration)]
    pub poll_interval: Duration,
    /// Lab profile of this evaluator; a plain simulated lab when absent.
    #[arg(long)]
    pub lab: Option<PathBuf>,
    /// Exit after this many jobs.
    #[arg(long)]
    pub max_jobs: Option<usize>,
}

pub fn evaluator(g: &Global, a: &EvaluatorArgs) -> Result<u8, Fail> {
    let id = a.id.clone().unwrap_or_else(|| format!("evaluator-{}", std::process::id()));
    let caps: Vec<&str> = a.caps.split(',').map(str::trim).filter(|c| !c.is_empty()).collect();
    let mut cfg = WorkerConfig::new(&id, &caps);
    cfg.poll_interval = a.poll_interval;
    cfg.lab = load_lab(a.lab.as_deref())?;
    cfg.launcher = launcher();
    cfg.log_root = g.out_dir.clone();
    cfg.max_jobs = a.max_jobs;
    let stats = run_worker(&g.client(), &cfg, &AtomicBool::new(false))?;
    log::info!(
        "ran {} jobs, {} reports accepted, {} rejected",
        stats.jobs_run,
        stats.reports_accepted,
        stats.reports_rejected
    );
    Ok(OK)
}

#[derive(Debug, Clone, Args)]
pub struct SubmitArgs {
    /// Benchmark or benchmark DAG id.
    pub benchmark: String,
    /// Agent bundle directory or `builtin:baseline`.
    #[arg(long)]
    pub agent: String,
    /// Submitting user; defaults to $USER.
    #[arg(long)]
    pub user: Option<String>,
}

pub fn submit(g: &Global, a: &SubmitArgs) -> Result<u8, Fail> {
    let agent = absolute_agent(&a.agent)?;
    let agent_digest = artifact_digest(&agent).map_err(|e| Fail::new(AGENT, e.to_string()))?;
    let user = a.user.clone().or_else(|| std::env::var("USER").ok()).unwrap_or_else(|| "anonymous".into());
    let req = SubmitRequest { user, target: a.benchmark.clone(), agent, agent_digest, seed: g.seed };
    for job in g.client().submit(&req)?.body {
        println!("{job}");
    }
    Ok(OK)
}

#[derive(Debug, Clone, Args)]
pub struct LeaderboardArgs {
    pub benchmark: String,
    /// Print the leaderboard as JSON.
    #[arg(long)]
    pub json: bool,
}

pub fn render_leaderboard(board: &Leaderboard) -> String {
    if board.is_empty() {
        return "no results\n".to_string();
    }
    let mut out = String::new();
    for g in &board.groups {
        for e in &g.entries {
            let scores: Vec<String> = e.scores.values.iter().map(|(m, v)| format!("{m}={v:.4}")).collect();
            out += &format!("{:>4}  {}  {}  {}  {}\n", g.rank, e.submission, e.user, e.job, scores.join(" "));
        }
    }
    for u in &board.unranked {
        out += &format!("{:>4}  {}  {}  {}  {}\n", "-", u.submission, u.user, u.job, u.status);
    }
    out
}

pub fn leaderboard(g: &Global, a: &LeaderboardArgs) -> Result<u8, Fail> {
    let board = g.client().leaderboard(&a.benchmark)?.body;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&board).map_err(Fail::other)?);
    } else {
        print!("{}", render_leaderboard(&board));
    }
    Ok(OK)
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Agent bundle directory or `builtin:baseline`.
    #[arg(long)]
    pub agent: String,
    /// Benchmark specification file.
    #[arg(long)]
    pub benchmark: PathBuf,
    /// Lab profile file.
    #[arg(long)]
    pub lab: Option<PathBuf>,
    #[arg(long, default_value = "local")]
    pub job_id: String,
}

/// Exit code of a finished local evaluation.
pub fn report_code(report: &EvaluationReport) -> u8 {
    match report.status {
        ReportStatus::Success => OK,
        ReportStatus::Failed => AGENT,
        ReportStatus::Invalidated => FAILURE,
    }
}

fn agent_fail(e: AgentError) -> Fail {
    Fail::new(AGENT, e.to_string())
}

pub fn evaluate_local(g: &Global, a: &EvaluateArgs) -> Result<u8, Fail> {
    let text = fs::read_to_string(&a.benchmark).map_err(|e| Fail::spec(format!("{}: {e}", a.benchmark.display())))?;
    let spec = BenchmarkSpec::from_toml(&text).map_err(|e| Fail::spec(format!("{}: {e}", a.benchmark.display())))?;
    let map = spec.load_map(a.benchmark.parent()).map_err(Fail::spec)?;
    let lab = load_lab(a.lab.as_deref())?;
    let agent = a.agent.parse::<AgentRef>().and_then(|r| ResolvedAgent::resolve(&r)).map_err(agent_fail)?;
    let launcher = launcher();
    let map = Arc::new(map);
    let log_dir = g.out_dir.as_ref().map(|d| d.join(&a.job_id));
    let ev = evaluate(&EvaluationRequest {
        job_id: &a.job_id,
        spec: &spec,
        map: &map,
        agent: &agent,
        lab: &lab,
        seed: g.seed,
        launcher: &launcher,
        log_dir: log_dir.as_deref(),
    })
    .map_err(|e| match e {
        EvalError::Spec(e) => Fail::spec(e),
        EvalError::Agent(e) => agent_fail(e),
        EvalError::Lab(e) => Fail::spec(e),
        EvalError::Io(e) => Fail::other(e),
    })?;
    let r = &ev.report;
    println!("{}", serde_json::to_string_pretty(r).map_err(Fail::other)?);
    let metric = |k: &str| r.metrics.get(k).map_or("-".to_string(), |v| format!("{v:.4}"));
    eprintln!(
        "{} {}: mpd_abs {} m, mod_abs {} rad, survival {} s{}",
        r.status.as_str(),
        r.digest,
        metric("mpd_abs"),
        metric("mod_abs"),
        metric("survival_time"),
        r.disqualified.as_ref().map_or(String::new(), |d| format!(", terminated:{d}")),
    );
    for d in &r.diagnostics {
        eprintln!("  {d}");
    }
    Ok(report_code(r))
}

#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    /// Studies to run; all three when absent.
    #[arg(long = "study")]
    pub studies: Vec<StudyKind>,
    /// Remove every noise source.
    #[arg(long)]
    pub noiseless: bool,
    /// Seed of the robot fleet.
    #[arg(long)]
    pub fleet_seed: Option<u64>,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Fail> {
    let text = serde_json::to_string_pretty(value).map_err(Fail::other)?;
    fs::write(path, text + "\n").map_err(|e| Fail::other(format!("{}: {e}", path.display())))
}

fn write_runs(dir: &Path, data: &StudyData) -> Result<(), Fail> {
    let runs = dir.join("runs");
    fs::create_dir_all(&runs).map_err(|e| Fail::other(format!("{}: {e}", runs.display())))?;
    for r in &data.runs {
        write_json(&runs.join(format!("{}-{:02}.json", r.plan.kind, r.plan.index)), r)?;
    }
    Ok(())
}

/// Runs the studies and writes `table.json`, `table.txt` and one file per
/// run with its lane series under `runs/`.
pub fn repro_study(g: &Global, a: &StudyArgs) -> Result<u8, Fail> {
    let mut cfg = if a.noiseless { StudyConfig::noiseless(g.seed) } else { StudyConfig::standard(g.seed) };
    if let Some(f) = a.fleet_seed {
        cfg.fleet_seed = f;
    }
    let kinds = if a.studies.is_empty() { StudyKind::ALL.to_vec() } else { a.studies.clone() };
    let dir = g.out_dir.clone().unwrap_or_else(|| PathBuf::from("study-out"));
    fs::create_dir_all(&dir).map_err(|e| Fail::other(format!("{}: {e}", dir.display())))?;
    match run_study(&cfg, &kinds) {
        Ok(StudyResult { table, data }) => {
            write_runs(&dir, &data)?;
            write_json(&dir.join("table.json"), &table)?;
            fs::write(dir.join("table.txt"), table.render()).map_err(|e| Fail::other(e.to_string()))?;
            print!("{}", table.render());
            Ok(OK)
        }
        Err(StudyError::Run { group, run, reason, partial }) => {
            write_runs(&dir, &partial)?;
            Err(Fail::other(format!("run {run} of {group} did not complete: {reason}; partial data in {}", dir.display())))
        }
        Err(StudyError::Config(e)) => Err(Fail::new(SPEC, e)),
        Err(e) => Err(Fail::other(e)),
    }
}
