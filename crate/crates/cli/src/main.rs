use std::process::ExitCode;

use clap::{Parser, Subcommand};

use autolab_cli::commands::{
    self, EvaluateArgs, EvaluatorArgs, Global, LeaderboardArgs, ServeArgs, StudyArgs, SubmitArgs,
};
use autolab_cli::exit::finish;

/// Robot-benchmarking lab: server, evaluators, submissions and studies.
#[derive(Debug, Parser)]
#[command(name = "autolab", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run the challenges server.
    Serve(ServeArgs),
    /// Poll the server for jobs and evaluate them.
    Evaluator(EvaluatorArgs),
    /// Submit an agent to a benchmark; prints one job id per line.
    Submit(SubmitArgs),
    /// Evaluate an agent locally; prints the report.
    Evaluate(EvaluateArgs),
    /// Show a benchmark's leaderboard.
    Leaderboard(LeaderboardArgs),
    /// Reproduce the same-robot, inter-robot and cross-lab studies.
    ReproStudy(StudyArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    autolab_cli::init_logging();
    let g = &cli.global;
    finish(match &cli.cmd {
        Cmd::Serve(a) => commands::serve(g, a),
        Cmd::Evaluator(a) => commands::evaluator(g, a),
        Cmd::Submit(a) => commands::submit(g, a),
        Cmd::Evaluate(a) => commands::evaluate_local(g, a),
        Cmd::Leaderboard(a) => commands::leaderboard(g, a),
        Cmd::ReproStudy(a) => commands::repro_study(g, a),
    })
}
