//! Framed CBOR envelopes and the agent/robot node loops.
//!
//! Every message is one [`MessageEnvelope`] encoded as canonical CBOR and
//! prefixed with its 4-byte big-endian length. The same bytes travel over
//! named pipes, TCP, or an in-process link. Agents answer every observation
//! with exactly one command carrying `in_reply_to`.

pub mod cbor;
mod envelope;
mod node;
pub mod transport;

use thiserror::Error;

pub use cbor::Value;
pub use envelope::{
    decode_body, decode_capture, decode_envelope, encode_envelope, read_frame, topics,
    write_envelope, MessageEnvelope, Payload, MAX_FRAME_LEN,
};
pub use node::{
    run_agent_node, run_robot_node, Agent, AgentSession, AgentStep, AgentSummary, DutyCommand,
    InProcessLink, Link, Received, RobotNodeConfig, RobotNodeError, RobotNodeReport, RobotStepper,
    RobotTick,
    StreamLink,
};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("envelope topic is empty")]
    EmptyTopic,
    #[error("frame length {0} exceeds the {MAX_FRAME_LEN}-byte limit")]
    Oversize(u64),
    #[error("zero-length frame")]
    EmptyFrame,
    #[error("truncated frame: expected {expected} bytes, stream ended after {got}")]
    Truncated { expected: u64, got: u64 },
    #[error("malformed CBOR: {0}")]
    Cbor(#[from] cbor::CborError),
    #[error("malformed envelope: {0}")]
    Malformed(String),
    #[error("protocol order violation: {0}")]
    OrderViolation(String),
    #[error("channel closed")]
    Closed,
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}
