//! Watchtower detections and SE(2) pose-graph trajectory reconstruction.
//!
//! Towers sit at known poses and report the pose of every robot inside their
//! field of view, relative to themselves. Detections are snapped to keyframes,
//! chained by weak constant-pose priors, and solved by Levenberg–Marquardt.

mod detect;
mod graph;
mod skyline;
mod solve;

use thiserror::Error;

pub use detect::{auto_towers, coverage_gaps, simulate_detections, Detection, DetectionNoise, Watchtower};
pub use graph::{build_graph, Edge, NodeKey, NodeRef, PoseGraph, SmoothnessPrior};
pub use skyline::Skyline;
pub use solve::{
    chi2, edge_residual, estimate_trajectory, linearize_edge, optimize, EdgeLinearization, Solution, SolveStats,
    SolverConfig,
};

use std::collections::BTreeMap;

use crate::simworld::{Trajectory, TileMap};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocError {
    #[error("empty trajectory for target {0}")]
    EmptyTrajectory(u32),
    #[error("invalid localization setting: {0}")]
    InvalidConfig(String),
    #[error("under-constrained graph: nodes {0:?} are not connected to any anchor")]
    UnderConstrained(Vec<NodeKey>),
    #[error("singular normal equations around nodes {0:?}")]
    Singular(Vec<NodeKey>),
    #[error("unknown target {0}")]
    UnknownTarget(u32),
    #[error("target {0} has fewer than two keyframes")]
    TooFewKeyframes(u32),
    #[error("malformed detection record: {0}")]
    Malformed(String),
}

/// Everything needed to turn ground truth into estimated trajectories.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationConfig {
    pub rate_hz: f64,
    pub sigma_xy: f64,
    pub sigma_theta: f64,
    pub keyframe_dt: f64,
    pub smoothness_xy: f64,
    pub smoothness_theta: f64,
    /// Tower field of view as a fraction of the tile size.
    pub fov_tiles: f64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            rate_hz: 10.0,
            sigma_xy: 0.01,
            sigma_theta: 0.02,
            keyframe_dt: 0.1,
            smoothness_xy: 0.05,
            smoothness_theta: 0.2,
            fov_tiles: 0.75,
        }
    }
}

/// Output of [`localize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub detections: Vec<Detection>,
    pub solution: Solution,
    pub stats: SolveStats,
}

/// Simulates tower detections of every robot in `truth`, solves the pose
/// graph and returns the keyframe estimates.
pub fn localize(
    truth: &BTreeMap<u32, Trajectory>,
    map: &TileMap,
    cfg: &LocalizationConfig,
    seed: u64,
) -> Result<Reconstruction, LocError> {
    let towers = auto_towers(map, cfg.fov_tiles);
    let gaps = coverage_gaps(map, &towers);
    if !gaps.is_empty() {
        log::warn!("{} centerline points are outside every tower's view", gaps.len());
    }
    let noise = DetectionNoise {
        sigma_xy: cfg.sigma_xy,
        sigma_theta: cfg.sigma_theta,
    };
    let mut rng = crate::rng::stream(seed, "detections");
    let detections = simulate_detections(truth, &towers, cfg.rate_hz, noise, &mut rng)?;
    let anchors = towers.iter().map(|t| (t.id, t.pose)).collect();
    let prior = SmoothnessPrior::from_sigmas(cfg.smoothness_xy, cfg.smoothness_theta);
    let graph = build_graph(&detections, &anchors, cfg.keyframe_dt, prior)?;
    let (solution, stats) = optimize(&graph, &SolverConfig::default())?;
    Ok(Reconstruction {
        detections,
        solution,
        stats,
    })
}
