use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use autolab_core::assets;
use autolab_core::benchmark::BenchmarkSpec;
use autolab_core::evaluator::{evaluate, EvaluationRequest, LabProfile, Launcher, ResolvedAgent};
use autolab_server::{
    artifact_digest, register_builtin_benchmarks, run_worker, spawn_server, system_clock, Client, ClientError,
    JobStatus, RunningServer, Store, SubmitRequest, WorkerConfig, SEQ_HEADER,
};

fn start(dir: &Path, tokens: &[&str]) -> RunningServer {
    let (store, _) = Store::open(&dir.join("events.jsonl"), system_clock()).unwrap();
    register_builtin_benchmarks(&store).unwrap();
    spawn_server("127.0.0.1:0", Arc::new(store), tokens.iter().map(|t| t.to_string()).collect()).unwrap()
}

fn baseline(target: &str) -> SubmitRequest {
    SubmitRequest {
        user: "ann".into(),
        target: target.into(),
        agent: "builtin:baseline".into(),
        agent_digest: artifact_digest("builtin:baseline").unwrap(),
        seed: 5,
    }
}

fn raw_get(url: &str, token: Option<&str>) -> (u16, Option<String>) {
    let agent = ureq::Agent::config_builder().http_status_as_error(false).build().new_agent();
    let mut req = agent.get(url);
    if let Some(t) = token {
        req = req.header("Authorization", format!("Bearer {t}"));
    }
    let resp = req.call().unwrap();
    let seq = resp.headers().get(SEQ_HEADER).map(|v| v.to_str().unwrap().to_string());
    (resp.status().as_u16(), seq)
}

#[test]
fn every_response_carries_the_sequence_number() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path(), &["t0k"]);
    let seq = srv.store.seq().to_string();
    let cases = [
        ("/benchmarks/lf-sim/leaderboard", Some("t0k"), 200),
        ("/benchmarks/nope/leaderboard", Some("t0k"), 404),
        ("/jobs/job-000042", Some("t0k"), 404),
        ("/jobs/claim?evaluator=ghost", Some("t0k"), 403),
        ("/benchmarks/lf-sim/leaderboard", Some("wrong"), 401),
        ("/benchmarks/lf-sim/leaderboard", None, 401),
        ("/no/such/route", Some("t0k"), 404),
    ];
    for (path, token, want) in cases {
        let (status, got) = raw_get(&format!("{}{path}", srv.url()), token);
        assert_eq!(status, want, "{path}");
        assert_eq!(got.as_deref(), Some(seq.as_str()), "{path}");
    }
}

#[test]
fn bad_tokens_map_to_auth_errors() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path(), &["t0k"]);
    let anon = Client::new(&srv.url(), None);
    assert!(matches!(anon.leaderboard("lf-sim"), Err(ClientError::Auth { status: 401, .. })));
    let wrong = Client::new(&srv.url(), Some("nope".into()));
    assert!(matches!(wrong.submit(&baseline("lf-sim")), Err(ClientError::Auth { .. })));
    assert!(srv.store.state().submissions.is_empty());
    let ok = Client::new(&srv.addr.to_string(), Some("t0k".into()));
    let board = ok.leaderboard("lf-sim").unwrap();
    assert!(board.body.is_empty());
    assert_eq!(board.seq, srv.store.seq());
}

#[test]
fn unreachable_server_is_a_network_error() {
    let dir = tempfile::tempdir().unwrap();
    let url = start(dir.path(), &[]).url();
    let c = Client::new(&url, None);
    assert!(matches!(c.leaderboard("lf-sim"), Err(ClientError::Network(_))));
}

#[test]
fn api_errors_keep_their_status() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path(), &[]);
    let c = Client::new(&srv.url(), None);
    let mut bad = baseline("lf-sim");
    bad.agent_digest = "ab".repeat(32);
    assert_eq!(c.submit(&bad).unwrap_err().status(), Some(422));
    assert_eq!(c.submit(&baseline("nope")).unwrap_err().status(), Some(404));
    assert_eq!(c.claim("ghost", None).unwrap_err().status(), Some(403));
    assert_eq!(c.upload_benchmark("id = 3").unwrap_err().status(), Some(422));
    let spec = assets::LF_SIM.replace("id = \"lf-sim\"", "id = \"lf-short\"").replace("episodes = 2", "episodes = 1");
    assert_eq!(c.upload_benchmark(&spec).unwrap().body, "lf-short");
    assert_eq!(c.upload_benchmark(&spec).unwrap().body, "lf-short", "re-upload is idempotent");
    let changed = spec.replace("episodes = 1", "episodes = 3");
    assert_eq!(c.upload_benchmark(&changed).unwrap_err().status(), Some(409));
}

#[test]
fn claim_start_post_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path(), &[]);
    let c = Client::new(&srv.url(), None);
    c.register_evaluator("e1", &["sim".into()]).unwrap();
    c.register_evaluator("e2", &["sim".into()]).unwrap();
    let jobs = c.submit(&baseline("lf-sim")).unwrap().body;
    let a = c.claim("e1", None).unwrap().body.unwrap();
    assert_eq!(a.job.id, jobs[0]);
    assert!(c.claim("e2", None).unwrap().body.is_none());
    assert_eq!(c.start(&a.job.id, "e2").unwrap_err().status(), Some(409));
    assert_eq!(c.start(&a.job.id, "e1").unwrap().body.status, JobStatus::Running);
    let report = autolab_server::execute(&a, &WorkerConfig::new("e1", &["sim"]));
    let first = c.post_result(&a.job.id, "e1", &report).unwrap();
    assert!(!first.body.duplicate);
    let again = c.post_result(&a.job.id, "e1", &report).unwrap();
    assert!(again.body.duplicate);
    assert_eq!(first.seq, again.seq);
    assert_eq!(c.job(&a.job.id).unwrap().body.result, Some(report.digest.clone()));
    assert_eq!(srv.store.state().reports[&a.job.id], report);
}

#[test]
fn worker_runs_the_baseline_and_matches_a_local_run() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path(), &["t0k"]);
    let c = Client::new(&srv.url(), Some("t0k".into()));
    let jobs = c.submit(&baseline("lf-progression")).unwrap().body;
    assert_eq!(jobs.len(), 1);

    let mut cfg = WorkerConfig::new("w1", &["sim", "lab"]);
    cfg.poll_interval = Duration::from_millis(50);
    cfg.max_jobs = Some(2);
    cfg.log_root = Some(dir.path().join("runs"));
    let stats = run_worker(&c, &cfg, &AtomicBool::new(false)).unwrap();
    assert_eq!((stats.jobs_run, stats.reports_accepted, stats.reports_rejected), (2, 2, 0));
    assert!(dir.path().join("runs").join(&jobs[0]).exists());

    let sim = c.job(&jobs[0]).unwrap().body;
    assert_eq!(sim.status, JobStatus::Success);
    let state = srv.store.state();
    let report = state.reports[&jobs[0]].clone();
    assert_eq!(sim.result, Some(report.digest.clone()));
    assert!(report.metrics["survival_time"] >= 30.0);
    let lab = state.jobs.values().find(|j| j.benchmark == "lf-lab").expect("lab stage enqueued");
    assert_eq!(lab.status, JobStatus::Success);

    let spec = BenchmarkSpec::from_toml(assets::LF_SIM).unwrap();
    let map = Arc::new(spec.load_map(None).unwrap());
    let local = evaluate(&EvaluationRequest {
        job_id: &jobs[0],
        spec: &spec,
        map: &map,
        agent: &ResolvedAgent::Baseline,
        lab: &LabProfile::default(),
        seed: 5,
        launcher: &Launcher::default(),
        log_dir: None,
    })
    .unwrap();
    assert_eq!(local.report, report);

    let board = c.leaderboard("lf-sim").unwrap().body;
    assert_eq!(board.groups.len(), 1);
    assert_eq!(board.groups[0].entries[0].scores, report.scores.unwrap());
}
