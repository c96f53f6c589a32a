//! Differential-drive simulation over a tile map.
//!
//! Robots are unicycles integrated in closed form, sense their pose relative
//! to the right-hand lane with Gaussian noise, and are stopped when they leave
//! the road, stall, or run out of time.

mod agent;
mod dynamics;
mod episode;
mod hardware;
pub mod map;
pub mod pose;
mod sensing;
mod termination;

use thiserror::Error;

pub use agent::{baseline_agent, BaselineAgent, BaselineGains};
pub use dynamics::{body_twist, step_dynamics, DiffDrive};
pub use episode::{
    ConditionSample, Conditions, EpisodeConfig, EpisodeOutcome, LabEpisode, PassiveRobot, RobotStart, ACTIVE_ROBOT_ID,
};
pub use hardware::{sample_hardware, FieldDist, HardwareDistribution, RobotParams};
pub use map::{project_to_lane, LaneId, LanePoint, LaneProjection, Tile, TileKind, TileMap};
pub use pose::{interpolate, normalize_angle, Pose2, TimedPose, Trajectory};
pub use sensing::{sense, Observation};
pub use termination::{check_termination, TerminationConfig, TerminationReason};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("lane leaves the road at row {row}, column {col}, {edge} edge")]
    DisconnectedLane { row: usize, col: usize, edge: &'static str },
    #[error("pose ({x:.3}, {y:.3}) is not on a drivable tile")]
    NotOnRoad { x: f64, y: f64 },
    #[error("invalid hardware distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid robot start: {0}")]
    InvalidStart(String),
}
