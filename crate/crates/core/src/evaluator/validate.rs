use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::run::{EpisodeLog, EpisodeStatus, RunLog};
use crate::benchmark::BenchmarkSpec;
use crate::protocol::{decode_capture, topics};

/// Fraction of an episode the localization estimate must span.
pub const MIN_COVERAGE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunVerdict {
    Valid,
    Invalidated(Vec<String>),
}

impl RunVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, RunVerdict::Valid)
    }
}

fn check_episode(ep: &EpisodeLog, spec: &BenchmarkSpec, reasons: &mut Vec<String>) {
    let k = ep.index;
    if ep.status == EpisodeStatus::Aborted {
        reasons.push(format!("episode {k}: aborted: {}", ep.error.as_deref().unwrap_or("unknown")));
        return;
    }
    let envs = match decode_capture(&ep.capture) {
        Ok(e) => e,
        Err(e) => {
            reasons.push(format!("episode {k}: capture unreadable: {e}"));
            return;
        }
    };
    let mut last: BTreeMap<&str, (u64, f64)> = BTreeMap::new();
    for env in &envs {
        if let Some(&(seq, stamp)) = last.get(env.topic.as_str()) {
            if env.seq <= seq || env.stamp < stamp {
                reasons.push(format!(
                    "episode {k}: {} stamps not monotone at seq {} (stamp {})",
                    env.topic, env.seq, env.stamp
                ));
                break;
            }
        }
        last.insert(env.topic.as_str(), (env.seq, env.stamp));
    }
    let limit = 2.0 / ep.control_rate;
    let mut obs: Vec<f64> = envs.iter().filter(|e| e.topic == topics::OBSERVATION).map(|e| e.stamp).collect();
    if let Some(end) = envs.iter().find(|e| e.topic == topics::EPISODE_END) {
        obs.push(end.stamp);
    }
    if let Some(w) = obs.windows(2).find(|w| w[1] - w[0] >= limit - 1e-9) {
        reasons.push(format!(
            "episode {k}: observation gap of {:.3} s at t={:.3} (limit {limit:.3} s)",
            w[1] - w[0],
            w[0]
        ));
    }
    if ep.duration > 0.0 {
        let covered = match (ep.estimate.first(), ep.estimate.last()) {
            (Some(a), Some(b)) => (b.t - a.t + spec.localization.keyframe_dt) / ep.duration,
            _ => 0.0,
        };
        if covered < MIN_COVERAGE {
            reasons.push(format!("episode {k}: localization coverage {:.1}% below {:.0}%", covered * 100.0, MIN_COVERAGE * 100.0));
        }
    }
    let [lo, hi] = spec.environment.illumination;
    let budget = spec.environment.latency_budget;
    if let Some(c) = ep
        .conditions
        .iter()
        .find(|c| !(lo <= c.illumination && c.illumination <= hi && c.latency <= budget))
    {
        reasons.push(format!(
            "episode {k}: environment condition out of band at t={:.2}: illumination {:.3}, latency {:.3} s",
            c.t, c.illumination, c.latency
        ));
    }
}

/// Checks the integrity of every episode the agent did not fail, and
/// collects every reason to distrust the data.
pub fn validate_run(log: &RunLog, spec: &BenchmarkSpec) -> RunVerdict {
    let mut reasons = Vec::new();
    if log.episodes.len() != spec.episodes as usize {
        reasons.push(format!("run has {} episodes, benchmark asks for {}", log.episodes.len(), spec.episodes));
    }
    for ep in log.episodes.iter().filter(|e| e.status != EpisodeStatus::AgentFailed) {
        check_episode(ep, spec, &mut reasons);
    }
    if reasons.is_empty() {
        RunVerdict::Valid
    } else {
        RunVerdict::Invalidated(reasons)
    }
}
