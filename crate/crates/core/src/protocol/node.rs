use std::collections::VecDeque;
use std::io::{Read, Write};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use super::cbor::Value;
use super::envelope::{decode_body, encode_envelope, read_frame, topics, MessageEnvelope, Payload};
use super::ProtocolError;

/// Left/right wheel duty cycles in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DutyCommand {
    pub u_l: f64,
    pub u_r: f64,
}

impl DutyCommand {
    pub fn new(u_l: f64, u_r: f64) -> Self {
        Self { u_l, u_r }
    }

    pub fn clamped(self) -> Self {
        Self {
            u_l: self.u_l.clamp(-1.0, 1.0),
            u_r: self.u_r.clamp(-1.0, 1.0),
        }
    }

    pub fn to_payload(self) -> Payload {
        let mut p = Payload::new();
        p.insert("u_l".into(), Value::Float(self.u_l));
        p.insert("u_r".into(), Value::Float(self.u_r));
        p
    }

    pub fn from_payload(p: &Payload) -> Result<Self, ProtocolError> {
        let get = |k: &str| {
            p.get(k)
                .and_then(Value::as_f64)
                .filter(|v| v.is_finite())
                .ok_or_else(|| ProtocolError::Malformed(format!("command field {k} missing or not finite")))
        };
        Ok(Self::new(get("u_l")?, get("u_r")?).clamped())
    }
}

/// Observation-to-command policy run inside an agent node.
pub trait Agent {
    fn on_episode_start(&mut self, _start: &MessageEnvelope) {}
    fn act(&mut self, observation: &MessageEnvelope) -> Result<Payload, ProtocolError>;
}

impl<F> Agent for F
where
    F: FnMut(&MessageEnvelope) -> Payload,
{
    fn act(&mut self, observation: &MessageEnvelope) -> Result<Payload, ProtocolError> {
        Ok(self(observation))
    }
}

#[derive(Debug, PartialEq)]
pub enum AgentStep {
    Reply(MessageEnvelope),
    Idle,
    Finished,
}

/// Agent-side protocol state, independent of the transport.
pub struct AgentSession<A> {
    agent: A,
    started: bool,
    next_seq: u64,
    last_obs_seq: Option<u64>,
    pub commands_sent: u64,
}

impl<A: Agent> AgentSession<A> {
    pub fn new(agent: A) -> Self {
        Self {
            agent,
            started: false,
            next_seq: 0,
            last_obs_seq: None,
            commands_sent: 0,
        }
    }

    pub fn handle(&mut self, env: &MessageEnvelope) -> Result<AgentStep, ProtocolError> {
        match env.topic.as_str() {
            topics::EPISODE_START => {
                self.started = true;
                self.agent.on_episode_start(env);
                Ok(AgentStep::Idle)
            }
            topics::EPISODE_END => Ok(AgentStep::Finished),
            topics::OBSERVATION => {
                if !self.started {
                    return Err(ProtocolError::OrderViolation(
                        "observation before episode_start".into(),
                    ));
                }
                if self.last_obs_seq.is_some_and(|s| env.seq <= s) {
                    return Err(ProtocolError::OrderViolation(format!(
                        "observation seq {} not increasing",
                        env.seq
                    )));
                }
                self.last_obs_seq = Some(env.seq);
                let mut payload = self.agent.act(env)?;
                payload.insert("in_reply_to".into(), Value::Int(env.seq as i128));
                let reply = MessageEnvelope::new(topics::COMMAND, self.next_seq, env.stamp, payload);
                self.next_seq += 1;
                self.commands_sent += 1;
                Ok(AgentStep::Reply(reply))
            }
            // Unknown topics are tolerated for forward compatibility.
            _ => Ok(AgentStep::Idle),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSummary {
    pub commands_sent: u64,
}

/// Runs an agent over a byte-stream channel until `episode_end`.
///
/// Each handled envelope is noted in `log`, which is flushed on every exit
/// path so a failing node leaves its partial log behind.
pub fn run_agent_node<R: Read, W: Write, A: Agent>(
    mut reader: R,
    mut writer: W,
    agent: A,
    mut log: Option<&mut dyn Write>,
) -> Result<AgentSummary, ProtocolError> {
    let mut session = AgentSession::new(agent);
    let result = (|| loop {
        let Some(body) = read_frame(&mut reader)? else {
            return Err(ProtocolError::Closed);
        };
        let env = decode_body(&body)?;
        if let Some(l) = log.as_deref_mut() {
            let _ = writeln!(l, "recv {} seq={} stamp={:.3}", env.topic, env.seq, env.stamp);
        }
        match session.handle(&env)? {
            AgentStep::Reply(reply) => {
                writer.write_all(&encode_envelope(&reply)?)?;
                writer.flush()?;
            }
            AgentStep::Idle => {}
            AgentStep::Finished => {
                return Ok(AgentSummary {
                    commands_sent: session.commands_sent,
                })
            }
        }
    })();
    if let Some(l) = log.as_deref_mut() {
        match &result {
            Ok(s) => {
                let _ = writeln!(l, "done commands={}", s.commands_sent);
            }
            Err(e) => {
                let _ = writeln!(l, "error commands={} {e}", session.commands_sent);
            }
        }
        let _ = l.flush();
    }
    result
}

/// An envelope as it arrived, with its raw frame for captures.
#[derive(Debug, Clone)]
pub struct Received {
    pub env: MessageEnvelope,
    pub frame: Vec<u8>,
}

/// Robot-side view of a channel to one agent.
pub trait Link {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), ProtocolError>;
    /// Waits up to `timeout` for the next envelope; `Ok(None)` on timeout.
    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Received>, ProtocolError>;
}

/// Link over a byte stream pair. A reader thread decodes frames so the robot
/// loop can wait with a deadline; envelopes still reach the loop in order.
pub struct StreamLink<W> {
    writer: W,
    rx: Receiver<Result<Received, ProtocolError>>,
    failed: bool,
}

impl<W: Write> StreamLink<W> {
    pub fn new<R: Read + Send + 'static>(reader: R, writer: W) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = reader;
            loop {
                let item = match read_frame(&mut reader) {
                    Ok(Some(body)) => decode_body(&body).map(|env| {
                        let mut frame = (body.len() as u32).to_be_bytes().to_vec();
                        frame.extend_from_slice(&body);
                        Received { env, frame }
                    }),
                    Ok(None) => Err(ProtocolError::Closed),
                    Err(e) => Err(e),
                };
                let fatal = item.is_err();
                if tx.send(item).is_err() || fatal {
                    break;
                }
            }
        });
        Self {
            writer,
            rx,
            failed: false,
        }
    }
}

impl<W: Write> Link for StreamLink<W> {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), ProtocolError> {
        self.writer.write_all(frame)?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Received>, ProtocolError> {
        if self.failed {
            return Err(ProtocolError::Closed);
        }
        match self.rx.recv_timeout(timeout) {
            Ok(Ok(r)) => Ok(Some(r)),
            Ok(Err(e)) => {
                self.failed = true;
                Err(e)
            }
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => {
                self.failed = true;
                Err(ProtocolError::Closed)
            }
        }
    }
}

/// Link to an agent running in the same process. Frames are still encoded
/// and decoded so captures are byte-identical to an out-of-process run.
pub struct InProcessLink<A> {
    session: AgentSession<A>,
    outbox: VecDeque<Vec<u8>>,
    finished: bool,
}

impl<A: Agent> InProcessLink<A> {
    pub fn new(agent: A) -> Self {
        Self {
            session: AgentSession::new(agent),
            outbox: VecDeque::new(),
            finished: false,
        }
    }
}

impl<A: Agent> Link for InProcessLink<A> {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), ProtocolError> {
        if self.finished {
            return Err(ProtocolError::Closed);
        }
        let mut r = frame;
        let body = read_frame(&mut r)?.ok_or(ProtocolError::Closed)?;
        let env = decode_body(&body)?;
        match self.session.handle(&env)? {
            AgentStep::Reply(reply) => self.outbox.push_back(encode_envelope(&reply)?),
            AgentStep::Idle => {}
            AgentStep::Finished => self.finished = true,
        }
        Ok(())
    }

    fn recv_timeout(&mut self, _timeout: Duration) -> Result<Option<Received>, ProtocolError> {
        match self.outbox.pop_front() {
            Some(frame) => {
                let env = decode_body(&frame[4..])?;
                Ok(Some(Received { env, frame }))
            }
            None => Ok(None),
        }
    }
}

pub enum RobotTick {
    Observation(Payload),
    Finished(Payload),
}

/// The robot half of the interface: produces observations and consumes
/// commands on a fixed simulated clock.
pub trait RobotStepper {
    fn start_payload(&self) -> Payload;
    fn sense(&mut self, stamp: f64) -> RobotTick;
    fn actuate(&mut self, cmd: DutyCommand, stamp: f64, dt: f64);
}

#[derive(Debug, Clone)]
pub struct RobotNodeConfig {
    pub rate_hz: f64,
    /// Wall-clock wait for the reply to each observation. Prompt agents
    /// never hit it, so the simulated clock stays deterministic.
    pub reply_timeout: Duration,
}

impl Default for RobotNodeConfig {
    fn default() -> Self {
        Self {
            rate_hz: 10.0,
            reply_timeout: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RobotNodeReport {
    pub observations: u64,
    pub commands: u64,
    /// Ticks actuated without a reply to that tick's observation.
    pub stale_ticks: u64,
    pub end_payload: Payload,
    /// Every frame sent and received, in processing order.
    pub capture: Vec<u8>,
    pub commands_applied: Vec<DutyCommand>,
}

/// Error raised by [`run_robot_node`], with everything captured so far.
#[derive(Debug)]
pub struct RobotNodeError {
    pub error: ProtocolError,
    pub partial: RobotNodeReport,
}

impl std::fmt::Display for RobotNodeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} after {} commands", self.error, self.partial.commands)
    }
}

impl std::error::Error for RobotNodeError {}

/// Drives a robot against one agent until the robot reports the episode is
/// over. Commands are held between ticks (zero-order hold, initially zero).
pub fn run_robot_node<L: Link, R: RobotStepper>(
    link: &mut L,
    robot: &mut R,
    cfg: &RobotNodeConfig,
) -> Result<RobotNodeReport, RobotNodeError> {
    let mut report = RobotNodeReport::default();
    match robot_loop(link, robot, cfg, &mut report) {
        Ok(()) => Ok(report),
        Err(error) => Err(RobotNodeError {
            error,
            partial: report,
        }),
    }
}

fn robot_loop<L: Link, R: RobotStepper>(
    link: &mut L,
    robot: &mut R,
    cfg: &RobotNodeConfig,
    report: &mut RobotNodeReport,
) -> Result<(), ProtocolError> {
    let dt = 1.0 / cfg.rate_hz;
    let send = |link: &mut L, report: &mut RobotNodeReport, env: MessageEnvelope| {
        let frame = encode_envelope(&env)?;
        report.capture.extend_from_slice(&frame);
        link.send_frame(&frame)
    };
    send(
        link,
        report,
        MessageEnvelope::new(topics::EPISODE_START, 0, 0.0, robot.start_payload()),
    )?;
    let mut held = DutyCommand::default();
    let mut last_cmd_seq: Option<u64> = None;
    let mut tick: u64 = 0;
    loop {
        let stamp = tick as f64 * dt;
        let payload = match robot.sense(stamp) {
            RobotTick::Finished(p) => {
                report.end_payload = p.clone();
                send(link, report, MessageEnvelope::new(topics::EPISODE_END, 0, stamp, p))?;
                return Ok(());
            }
            RobotTick::Observation(p) => p,
        };
        send(link, report, MessageEnvelope::new(topics::OBSERVATION, tick, stamp, payload))?;
        report.observations += 1;

        let deadline = Instant::now() + cfg.reply_timeout;
        let mut fresh = false;
        while !fresh {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let Some(rx) = link.recv_timeout(remaining)? else {
                break;
            };
            if rx.env.topic != topics::COMMAND {
                continue;
            }
            if last_cmd_seq.is_some_and(|s| rx.env.seq <= s) {
                return Err(ProtocolError::OrderViolation(format!(
                    "command seq {} not increasing",
                    rx.env.seq
                )));
            }
            last_cmd_seq = Some(rx.env.seq);
            let reply_to = rx
                .env
                .get("in_reply_to")
                .and_then(Value::as_u64)
                .ok_or_else(|| ProtocolError::Malformed("command without in_reply_to".into()))?;
            if reply_to > tick {
                return Err(ProtocolError::OrderViolation(format!(
                    "command replies to future observation {reply_to}"
                )));
            }
            held = DutyCommand::from_payload(&rx.env.payload)?;
            report.capture.extend_from_slice(&rx.frame);
            report.commands += 1;
            fresh = reply_to == tick;
            if remaining.is_zero() {
                break;
            }
        }
        if !fresh {
            report.stale_ticks += 1;
        }
        report.commands_applied.push(held);
        robot.actuate(held, stamp, dt);
        tick += 1;
    }
}
