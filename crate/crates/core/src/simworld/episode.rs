//! One lab episode: the active robot driven over the protocol, passive
//! baseline robots driven in-process, and the environment trace.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::agent::{baseline_agent, BaselineGains};
use super::dynamics::DiffDrive;
use super::hardware::RobotParams;
use super::map::TileMap;
use super::pose::{Pose2, TimedPose, Trajectory};
use super::sensing::sense;
use super::termination::{check_termination, TerminationConfig, TerminationReason};
use super::SimError;
use crate::protocol::{DutyCommand, Payload, RobotStepper, RobotTick, Value};
use crate::rng::{self, SimRng};

pub const ACTIVE_ROBOT_ID: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotStart {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl RobotStart {
    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.x, self.y, self.theta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassiveRobot {
    pub start: Pose2,
    pub params: RobotParams,
    pub gains: BaselineGains,
}

/// Lighting and network conditions of the lab during an episode. Each tick
/// the illumination is `illumination · (1 + flicker·N(0,1))` and sensor
/// noise scales with its inverse; command latency is
/// `max(0, latency + latency_jitter·N(0,1))` on top of the actuation delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conditions {
    pub illumination: f64,
    #[serde(default)]
    pub flicker: f64,
    #[serde(default)]
    pub latency: f64,
    #[serde(default)]
    pub latency_jitter: f64,
}

impl Default for Conditions {
    fn default() -> Self {
        Self {
            illumination: 1.0,
            flicker: 0.0,
            latency: 0.0,
            latency_jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionSample {
    pub t: f64,
    pub illumination: f64,
    pub latency: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub map: Arc<TileMap>,
    pub termination: TerminationConfig,
    pub rate_hz: f64,
    pub conditions: Conditions,
    /// Seeds sensing noise and condition traces.
    pub seed: u64,
    pub start: Pose2,
    pub params: RobotParams,
    pub passive: Vec<PassiveRobot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub reason: Option<TerminationReason>,
    pub duration: f64,
    /// Ground truth per robot id; the active robot is [`ACTIVE_ROBOT_ID`].
    pub truth: BTreeMap<u32, Trajectory>,
    pub conditions: Vec<ConditionSample>,
}

struct Passive {
    body: DiffDrive,
    gains: BaselineGains,
    rng: SimRng,
    stopped: bool,
}

pub struct LabEpisode {
    cfg: EpisodeConfig,
    active: DiffDrive,
    sense_rng: SimRng,
    cond_rng: SimRng,
    passive: Vec<Passive>,
    truth: BTreeMap<u32, Trajectory>,
    conditions: Vec<ConditionSample>,
    reason: Option<TerminationReason>,
    time: f64,
    noise_scale: f64,
    latency: f64,
}

fn standard_normal(rng: &mut SimRng) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

impl LabEpisode {
    pub fn new(cfg: EpisodeConfig) -> Result<Self, SimError> {
        cfg.params.validate()?;
        if !(cfg.rate_hz > 0.0 && cfg.rate_hz.is_finite()) {
            return Err(SimError::InvalidStart(format!("control rate {} must be positive", cfg.rate_hz)));
        }
        let check = |p: &Pose2| {
            cfg.map
                .project(p)
                .map_err(|e| SimError::InvalidStart(format!("start pose off the road: {e}")))
        };
        check(&cfg.start)?;
        let mut passive = Vec::new();
        let mut truth = BTreeMap::new();
        truth.insert(ACTIVE_ROBOT_ID, vec![TimedPose { t: 0.0, pose: cfg.start }]);
        for (k, p) in cfg.passive.iter().enumerate() {
            check(&p.start)?;
            p.params.validate()?;
            let id = ACTIVE_ROBOT_ID + 1 + k as u32;
            truth.insert(id, vec![TimedPose { t: 0.0, pose: p.start }]);
            passive.push(Passive {
                body: DiffDrive::new(p.params, p.start),
                gains: p.gains,
                rng: rng::stream(cfg.seed, &format!("sense/{id}")),
                stopped: false,
            });
        }
        Ok(Self {
            active: DiffDrive::new(cfg.params, cfg.start),
            sense_rng: rng::stream(cfg.seed, &format!("sense/{ACTIVE_ROBOT_ID}")),
            cond_rng: rng::stream(cfg.seed, "conditions"),
            passive,
            truth,
            conditions: Vec::new(),
            reason: None,
            time: 0.0,
            noise_scale: 1.0,
            latency: 0.0,
            cfg,
        })
    }

    pub fn outcome(&self) -> EpisodeOutcome {
        EpisodeOutcome {
            reason: self.reason,
            duration: self.time,
            truth: self.truth.clone(),
            conditions: self.conditions.clone(),
        }
    }

    pub fn into_outcome(self) -> EpisodeOutcome {
        EpisodeOutcome {
            reason: self.reason,
            duration: self.time,
            truth: self.truth,
            conditions: self.conditions,
        }
    }

    fn sample_conditions(&mut self, t: f64) {
        let c = self.cfg.conditions;
        let a = standard_normal(&mut self.cond_rng);
        let b = standard_normal(&mut self.cond_rng);
        let illumination = c.illumination * (1.0 + c.flicker * a);
        let latency = (c.latency + c.latency_jitter * b).max(0.0);
        self.noise_scale = 1.0 / illumination.max(0.1);
        self.latency = latency;
        self.conditions.push(ConditionSample { t, illumination, latency });
    }

    fn finish(&mut self, reason: TerminationReason, stamp: f64) -> RobotTick {
        self.reason = Some(reason);
        let mut p = Payload::new();
        p.insert("reason".into(), Value::from(reason.as_str()));
        p.insert("duration".into(), Value::Float(stamp));
        RobotTick::Finished(p)
    }
}

impl RobotStepper for LabEpisode {
    fn start_payload(&self) -> Payload {
        let mut p = Payload::new();
        p.insert("robot_id".into(), Value::from(ACTIVE_ROBOT_ID as u64));
        p.insert("rate_hz".into(), Value::Float(self.cfg.rate_hz));
        p.insert("time_limit".into(), Value::Float(self.cfg.termination.time_limit));
        p
    }

    fn sense(&mut self, stamp: f64) -> RobotTick {
        self.time = stamp;
        let history = &self.truth[&ACTIVE_ROBOT_ID];
        if let Some(reason) = check_termination(history, &self.cfg.map, stamp, &self.cfg.termination) {
            return self.finish(reason, stamp);
        }
        self.sample_conditions(stamp);
        let speed = self.active.speed();
        match sense(
            &self.active.pose,
            speed,
            &self.cfg.map,
            &self.cfg.params,
            self.noise_scale,
            &mut self.sense_rng,
        ) {
            Ok(obs) => RobotTick::Observation(obs.to_payload()),
            Err(_) => self.finish(TerminationReason::OutOfRoad, stamp),
        }
    }

    fn actuate(&mut self, cmd: DutyCommand, stamp: f64, dt: f64) {
        let t1 = stamp + dt;
        for (k, bot) in self.passive.iter_mut().enumerate() {
            if !bot.stopped {
                let speed = bot.body.speed();
                match sense(&bot.body.pose, speed, &self.cfg.map, &bot.body.params, self.noise_scale, &mut bot.rng) {
                    Ok(obs) => bot.body.command(baseline_agent(&obs, &bot.gains)),
                    Err(_) => bot.stopped = true,
                }
                if !bot.stopped {
                    bot.body.advance(dt);
                }
            }
            let id = ACTIVE_ROBOT_ID + 1 + k as u32;
            self.truth.get_mut(&id).expect("registered").push(TimedPose { t: t1, pose: bot.body.pose });
        }
        self.active.command_after(cmd, self.latency);
        self.active.advance(dt);
        self.truth
            .get_mut(&ACTIVE_ROBOT_ID)
            .expect("registered")
            .push(TimedPose { t: t1, pose: self.active.pose });
        self.time = t1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{run_robot_node, InProcessLink, RobotNodeConfig};
    use crate::simworld::BaselineAgent;

    fn loop_start() -> Pose2 {
        Pose2::new(0.6, 0.15, 0.0)
    }

    fn config(params: RobotParams, limit: f64) -> EpisodeConfig {
        EpisodeConfig {
            map: Arc::new(TileMap::from_toml(crate::assets::STANDARD_LOOP).unwrap()),
            termination: TerminationConfig {
                time_limit: limit,
                ..Default::default()
            },
            rate_hz: 10.0,
            conditions: Conditions::default(),
            seed: 4,
            start: loop_start(),
            params,
            passive: Vec::new(),
        }
    }

    fn run(cfg: EpisodeConfig, agent: impl crate::protocol::Agent) -> EpisodeOutcome {
        let mut ep = LabEpisode::new(cfg).unwrap();
        let mut link = InProcessLink::new(agent);
        run_robot_node(&mut link, &mut ep, &RobotNodeConfig::default()).unwrap();
        ep.into_outcome()
    }

    #[test]
    fn baseline_completes_a_lap_before_timeout() {
        let out = run(config(RobotParams::default(), 60.0), BaselineAgent::default());
        assert_eq!(out.reason, Some(TerminationReason::Timeout));
        let map = TileMap::from_toml(crate::assets::STANDARD_LOOP).unwrap();
        let traj = &out.truth[&ACTIVE_ROBOT_ID];
        assert_eq!(traj.len(), 601);
        let worst = traj
            .iter()
            .map(|p| map.project(&p.pose).unwrap().point.d.abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.1, "worst |d| {worst}");
    }

    #[test]
    fn full_right_leaves_the_road_quickly() {
        let out = run(config(RobotParams::default(), 60.0), |_: &crate::protocol::MessageEnvelope| {
            DutyCommand::new(1.0, 0.5).to_payload()
        });
        assert_eq!(out.reason, Some(TerminationReason::OutOfRoad));
        assert!(out.duration < 5.0, "{}", out.duration);
    }

    #[test]
    fn rollouts_are_reproducible() {
        let a = run(config(RobotParams::default(), 10.0), BaselineAgent::default());
        let b = run(config(RobotParams::default(), 10.0), BaselineAgent::default());
        assert_eq!(a, b);
    }

    #[test]
    fn passive_robots_are_tracked() {
        let mut cfg = config(RobotParams::default(), 5.0);
        cfg.passive.push(PassiveRobot {
            start: Pose2::new(2.25, 0.9, std::f64::consts::FRAC_PI_2),
            params: RobotParams::default(),
            gains: BaselineGains::default(),
        });
        let out = run(cfg, BaselineAgent::default());
        assert_eq!(out.truth.len(), 2);
        assert_eq!(out.truth[&2].len(), out.truth[&1].len());
    }
}
