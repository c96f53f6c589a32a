use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::agent::{Launcher, ResolvedAgent};
use super::compliance::{compliance_check, ComplianceReport};
use super::lab::LabProfile;
use crate::benchmark::BenchmarkSpec;
use crate::localization::{localize, LocalizationConfig};
use crate::protocol::{
    run_robot_node, InProcessLink, RobotNodeConfig, RobotNodeError, RobotNodeReport, StreamLink,
};
use crate::rng::derive_seed;
use crate::simworld::{
    sample_hardware, BaselineAgent, BaselineGains, ConditionSample, Conditions, EpisodeConfig, LabEpisode,
    PassiveRobot, Pose2, RobotParams, TerminationConfig, TerminationReason, TileMap, Trajectory, ACTIVE_ROBOT_ID,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    /// The episode ran to a termination condition.
    Completed,
    /// The agent could not be started or broke the protocol.
    AgentFailed,
    /// The lab could not run or process the episode.
    Aborted,
}

/// Everything recorded about one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub index: u32,
    pub seed: u64,
    pub compliance: ComplianceReport,
    pub status: EpisodeStatus,
    pub error: Option<String>,
    pub termination: Option<TerminationReason>,
    pub duration: f64,
    pub observations: u64,
    pub commands: u64,
    pub stale_ticks: u64,
    pub control_rate: f64,
    /// Every frame exchanged with the agent, in order.
    #[serde(skip)]
    pub capture: Vec<u8>,
    /// Ground truth per robot id.
    #[serde(skip)]
    pub truth: BTreeMap<u32, Trajectory>,
    /// Localization estimate of the active robot.
    #[serde(skip)]
    pub estimate: Trajectory,
    #[serde(skip)]
    pub conditions: Vec<ConditionSample>,
    #[serde(skip)]
    pub agent_stderr: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentInfo {
    pub job_id: String,
    pub benchmark_id: String,
    pub spec_digest: String,
    pub agent_digest: String,
    pub lab_id: String,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub experiment: ExperimentInfo,
    pub episodes: Vec<EpisodeLog>,
}

/// Fully determined inputs of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeSetup {
    pub index: u32,
    pub seed: u64,
    pub params: RobotParams,
    pub compliance: ComplianceReport,
    pub start: Pose2,
    pub passive: Vec<PassiveRobot>,
    pub conditions: Conditions,
    pub termination: TerminationConfig,
    pub control_rate: f64,
    pub localization: LocalizationConfig,
}

impl EpisodeSetup {
    /// The setup a benchmark prescribes for episode `index` in `lab`.
    pub fn from_spec(spec: &BenchmarkSpec, lab: &LabProfile, master_seed: u64, index: u32) -> Self {
        let seed = spec.episode_seed(master_seed, index);
        let (params, compliance) = match sample_hardware(&spec.hardware, derive_seed(seed, "active")) {
            Ok(p) => (p, compliance_check(&p, &spec.compliance)),
            Err(_) => {
                let p = spec.hardware.means();
                let mut c = compliance_check(&p, &spec.compliance);
                c.pass = false;
                (p, c)
            }
        };
        let passive = spec
            .passive
            .iter()
            .enumerate()
            .map(|(k, p)| PassiveRobot {
                start: p.pose(),
                params: sample_hardware(&spec.hardware, derive_seed(seed, &format!("passive/{k}")))
                    .unwrap_or_else(|_| spec.hardware.means()),
                gains: BaselineGains::default(),
            })
            .collect();
        Self {
            index,
            seed,
            params,
            compliance,
            start: lab.place(spec.active.pose(), seed),
            passive,
            conditions: lab.conditions,
            termination: spec.termination,
            control_rate: spec.control_rate,
            localization: lab.localization(&spec.localization),
        }
    }
}

fn blank_log(setup: &EpisodeSetup) -> EpisodeLog {
    EpisodeLog {
        index: setup.index,
        seed: setup.seed,
        compliance: setup.compliance.clone(),
        status: EpisodeStatus::Aborted,
        error: None,
        termination: None,
        duration: 0.0,
        observations: 0,
        commands: 0,
        stale_ticks: 0,
        control_rate: setup.control_rate,
        capture: Vec::new(),
        truth: BTreeMap::new(),
        estimate: Vec::new(),
        conditions: Vec::new(),
        agent_stderr: String::new(),
    }
}

fn absorb(log: &mut EpisodeLog, r: RobotNodeReport) {
    log.observations = r.observations;
    log.commands = r.commands;
    log.stale_ticks = r.stale_ticks;
    log.capture = r.capture;
}

/// Runs one episode against `agent` and localizes the active robot.
pub fn run_episode(setup: &EpisodeSetup, map: &Arc<TileMap>, agent: &ResolvedAgent, launcher: &Launcher) -> EpisodeLog {
    let mut log = blank_log(setup);
    if !setup.compliance.pass {
        log.error = Some(format!("hardware compliance failed: {}", setup.compliance.failures().join(", ")));
        return log;
    }
    let cfg = EpisodeConfig {
        map: map.clone(),
        termination: setup.termination,
        rate_hz: setup.control_rate,
        conditions: setup.conditions,
        seed: setup.seed,
        start: setup.start,
        params: setup.params,
        passive: setup.passive.clone(),
    };
    let mut episode = match LabEpisode::new(cfg) {
        Ok(e) => e,
        Err(e) => {
            log.error = Some(format!("cannot set up episode: {e}"));
            return log;
        }
    };
    let node_cfg = RobotNodeConfig { rate_hz: setup.control_rate, ..Default::default() };
    let result: Result<RobotNodeReport, RobotNodeError> = match agent {
        ResolvedAgent::Baseline => {
            run_robot_node(&mut InProcessLink::new(BaselineAgent::default()), &mut episode, &node_cfg)
        }
        ResolvedAgent::Bundle(bundle) => match launcher.spawn(bundle) {
            Err(e) => {
                log.status = EpisodeStatus::AgentFailed;
                log.error = Some(e.to_string());
                return log;
            }
            Ok((proc_, (reader, writer))) => {
                let mut link = StreamLink::new(reader, writer);
                let r = run_robot_node(&mut link, &mut episode, &node_cfg);
                drop(link);
                let (status, stderr) = proc_.finish();
                log.agent_stderr = stderr;
                if let Err(e) = &r {
                    log.error = Some(format!("agent {status}: {e}"));
                }
                r
            }
        },
    };
    let outcome = episode.into_outcome();
    log.truth = outcome.truth;
    log.conditions = outcome.conditions;
    log.duration = outcome.duration;
    log.termination = outcome.reason;
    match result {
        Ok(r) => absorb(&mut log, r),
        Err(e) => {
            if log.error.is_none() {
                log.error = Some(e.to_string());
            }
            absorb(&mut log, e.partial);
            log.status = EpisodeStatus::AgentFailed;
            return log;
        }
    }
    match localize(&log.truth, map, &setup.localization, setup.seed) {
        Ok(rec) => {
            log.estimate = rec.solution.trajectories.get(&ACTIVE_ROBOT_ID).cloned().unwrap_or_default();
            log.status = EpisodeStatus::Completed;
        }
        Err(e) => log.error = Some(format!("localization failed: {e}")),
    }
    log
}

/// Runs every episode of `spec` in order.
pub fn run_experiment(
    job_id: &str,
    spec: &BenchmarkSpec,
    map: &Arc<TileMap>,
    agent: &ResolvedAgent,
    lab: &LabProfile,
    master_seed: u64,
    launcher: &Launcher,
) -> RunLog {
    let episodes = (0..spec.episodes)
        .map(|k| {
            let setup = EpisodeSetup::from_spec(spec, lab, master_seed, k);
            let log = run_episode(&setup, map, agent, launcher);
            log::info!(
                "episode {k}: {:?} {} after {:.1} s",
                log.status,
                log.termination.map_or("-", |t| t.as_str()),
                log.duration
            );
            log
        })
        .collect();
    RunLog {
        experiment: ExperimentInfo {
            job_id: job_id.to_string(),
            benchmark_id: spec.id.clone(),
            spec_digest: spec.digest(),
            agent_digest: agent.digest(),
            lab_id: lab.id.clone(),
            master_seed,
        },
        episodes,
    }
}
