//! Shared implementation of the `autolab`, `autolab-evaluator` and
//! `autolab-agent` executables.

pub mod agents;
pub mod commands;
pub mod exit;

/// Logs to standard error at `info` unless `RUST_LOG` says otherwise.
pub fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
}
