//! Policies of the `autolab-agent` node. Besides the baseline they include
//! misbehaving agents used to exercise the evaluation pipeline.

use std::str::FromStr;

use autolab_core::protocol::transport::connect_from_env;
use autolab_core::protocol::{run_agent_node, Agent, DutyCommand, MessageEnvelope, Payload, ProtocolError};
use autolab_core::simworld::BaselineAgent;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Lane-following controller.
    Baseline,
    /// Full throttle with a steady veer; leaves the road.
    Runaway,
    /// Exits with a failure status after a few observations.
    Crash,
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Policy::Baseline),
            "runaway" => Ok(Policy::Runaway),
            "crash" => Ok(Policy::Crash),
            _ => Err(format!("unknown policy {s:?} (baseline, runaway, crash)")),
        }
    }
}

/// Observations answered before the crash policy gives up.
pub const CRASH_AFTER: u64 = 20;
/// Exit status of the crash policy.
pub const CRASH_STATUS: i32 = 70;

struct Runaway;

impl Agent for Runaway {
    fn act(&mut self, _obs: &MessageEnvelope) -> Result<Payload, ProtocolError> {
        Ok(DutyCommand::new(0.9, 0.6).to_payload())
    }
}

struct Crash {
    seen: u64,
}

impl Agent for Crash {
    fn act(&mut self, obs: &MessageEnvelope) -> Result<Payload, ProtocolError> {
        self.seen += 1;
        if self.seen > CRASH_AFTER {
            eprintln!("crash policy: giving up at observation {}", obs.seq);
            std::process::exit(CRASH_STATUS);
        }
        BaselineAgent::default().act(obs)
    }
}

/// Connects through `AUTOLAB_IN` / `AUTOLAB_OUT` and runs `policy` until
/// the episode ends. Returns the number of commands sent.
pub fn run_policy(policy: Policy) -> Result<u64, String> {
    let (reader, writer) = connect_from_env().map_err(|e| format!("cannot open channels: {e}"))?;
    let summary = match policy {
        Policy::Baseline => run_agent_node(reader, writer, BaselineAgent::default(), None),
        Policy::Runaway => run_agent_node(reader, writer, Runaway, None),
        Policy::Crash => run_agent_node(reader, writer, Crash { seen: 0 }, None),
    };
    summary.map(|s| s.commands_sent).map_err(|e| e.to_string())
}
