//! Challenges server of the autolab network, its HTTP client, and the
//! evaluator worker that runs jobs against the simulated lab.

pub mod client;
pub mod eventlog;
pub mod http;
pub mod state;
pub mod store;
pub mod worker;

pub use client::{Client, ClientError, Reply, ENV_SERVER, ENV_TOKEN};
pub use http::{register_builtin_benchmarks, router, serve, spawn_server, RunningServer, SEQ_HEADER};
pub use state::{
    Assignment, Event, Job, JobStatus, Leaderboard, LeaderboardEntry, LeaderboardGroup, ServerError, State,
    Submission, SubmitRequest, UnrankedEntry, DEFAULT_LEASE,
};
pub use store::{artifact_digest, system_clock, Clock, PostOutcome, Recovery, Store};
pub use worker::{execute, run_worker, WorkerConfig, WorkerStats};
