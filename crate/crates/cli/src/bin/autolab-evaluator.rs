use std::process::ExitCode;

use clap::Parser;

use autolab_cli::commands::{self, EvaluatorArgs, Global};
use autolab_cli::exit::finish;

/// Evaluator worker: claims jobs from the server and runs them.
#[derive(Debug, Parser)]
#[command(name = "autolab-evaluator", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(flatten)]
    args: EvaluatorArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    autolab_cli::init_logging();
    finish(commands::evaluator(&cli.global, &cli.args))
}
