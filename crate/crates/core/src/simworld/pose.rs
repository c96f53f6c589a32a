use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let w = a.sin().atan2(a.cos());
    if w <= -PI {
        PI
    } else {
        w
    }
}

/// Planar rigid pose. `theta` is kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// `self ∘ other`: `other` expressed in `self`'s frame, mapped out.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(-c * self.x - s * self.y, s * self.x - c * self.y, -self.theta)
    }

    /// `self⁻¹ ∘ other`: `other` seen from `self`.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        Pose2::new(c * dx + s * dy, -s * dx + c * dy, other.theta - self.theta)
    }

    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPose {
    pub t: f64,
    pub pose: Pose2,
}

/// Timestamped pose sequence with non-decreasing stamps.
pub type Trajectory = Vec<TimedPose>;

/// Pose at time `t` by linear interpolation in position and shortest-arc
/// interpolation in heading, clamped to the ends. `traj` must be non-empty.
pub fn interpolate(traj: &[TimedPose], t: f64) -> Pose2 {
    let first = traj[0];
    let last = traj[traj.len() - 1];
    if t <= first.t {
        return first.pose;
    }
    if t >= last.t {
        return last.pose;
    }
    let hi = traj.partition_point(|p| p.t <= t);
    let (a, b) = (traj[hi - 1], traj[hi]);
    if a.t == t || b.t == a.t {
        return a.pose;
    }
    let w = (t - a.t) / (b.t - a.t);
    let dtheta = normalize_angle(b.pose.theta - a.pose.theta);
    Pose2::new(
        a.pose.x + w * (b.pose.x - a.pose.x),
        a.pose.y + w * (b.pose.y - a.pose.y),
        a.pose.theta + w * dtheta,
    )
}
