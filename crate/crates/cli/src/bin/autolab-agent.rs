use std::process::ExitCode;

use clap::Parser;

use autolab_cli::agents::{run_policy, Policy};

/// Agent node speaking the framed protocol over AUTOLAB_IN / AUTOLAB_OUT.
#[derive(Debug, Parser)]
#[command(name = "autolab-agent", version)]
struct Cli {
    #[arg(long, default_value = "baseline")]
    policy: Policy,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_policy(cli.policy) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("autolab-agent: {e}");
            ExitCode::FAILURE
        }
    }
}
