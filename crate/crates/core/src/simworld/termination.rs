use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::map::TileMap;
use super::pose::{interpolate, TimedPose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    OutOfRoad,
    Crash,
    Timeout,
}

impl TerminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationReason::OutOfRoad => "out_of_road",
            TerminationReason::Crash => "crash",
            TerminationReason::Timeout => "timeout",
        }
    }
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TerminationReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "out_of_road" => Ok(TerminationReason::OutOfRoad),
            "crash" => Ok(TerminationReason::Crash),
            "timeout" => Ok(TerminationReason::Timeout),
            _ => Err(format!("unknown termination reason {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminationConfig {
    /// Largest allowed |d| before the robot counts as off the road.
    pub half_width: f64,
    /// Minimum mean speed over the crash window, m/s.
    pub crash_speed: f64,
    pub crash_window: f64,
    pub time_limit: f64,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        Self {
            half_width: 0.15,
            crash_speed: 0.01,
            crash_window: 2.0,
            time_limit: 60.0,
        }
    }
}

/// Checks the end conditions at time `t` against the pose history, in the
/// order out-of-road, crash, timeout.
pub fn check_termination(
    history: &[TimedPose],
    map: &TileMap,
    t: f64,
    cfg: &TerminationConfig,
) -> Option<TerminationReason> {
    let last = history.last()?;
    match map.project(&last.pose) {
        Ok(p) if p.point.d.abs() <= cfg.half_width => {}
        _ => return Some(TerminationReason::OutOfRoad),
    }
    let first = history[0];
    if t - first.t >= cfg.crash_window - 1e-9 {
        let earlier = interpolate(history, t - cfg.crash_window);
        if earlier.distance(&last.pose) < cfg.crash_speed * cfg.crash_window {
            return Some(TerminationReason::Crash);
        }
    }
    (t >= cfg.time_limit - 1e-9).then_some(TerminationReason::Timeout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::Pose2;

    fn map() -> TileMap {
        TileMap::from_toml(crate::assets::STANDARD_LOOP).unwrap()
    }

    /// Eastbound along the bottom straight at `speed`, offset `d` from the lane.
    fn drive(d: f64, speed: f64, until: f64) -> Vec<TimedPose> {
        let n = (until * 10.0).round() as usize;
        (0..=n)
            .map(|k| {
                let t = k as f64 * 0.1;
                TimedPose { t, pose: Pose2::new(0.65 + speed * t, 0.15 + d, 0.0) }
            })
            .collect()
    }

    #[test]
    fn out_of_road_when_too_far_left() {
        let h = drive(0.16, 0.0, 5.0);
        assert_eq!(check_termination(&h, &map(), 5.0, &TerminationConfig::default()), Some(TerminationReason::OutOfRoad));
    }

    #[test]
    fn crash_when_stalled() {
        let h = drive(0.0, 0.004, 3.0);
        assert_eq!(check_termination(&h, &map(), 3.0, &TerminationConfig::default()), Some(TerminationReason::Crash));
        // too early to judge
        let h = drive(0.0, 0.0, 1.5);
        assert_eq!(check_termination(&h, &map(), 1.5, &TerminationConfig::default()), None);
    }

    #[test]
    fn timeout_at_limit() {
        let mut h = drive(0.0, 0.02, 3.0);
        for p in &mut h {
            p.t += 57.0;
        }
        assert_eq!(check_termination(&h, &map(), 60.0, &TerminationConfig::default()), Some(TerminationReason::Timeout));
        assert_eq!(check_termination(&h, &map(), 59.9, &TerminationConfig::default()), None);
    }

    #[test]
    fn off_road_outranks_crash_and_timeout() {
        let mut h = drive(0.2, 0.0, 3.0);
        for p in &mut h {
            p.t += 57.0;
        }
        assert_eq!(check_termination(&h, &map(), 60.0, &TerminationConfig::default()), Some(TerminationReason::OutOfRoad));
        let h = drive(0.0, 0.0, 60.0);
        assert_eq!(check_termination(&h, &map(), 60.0, &TerminationConfig::default()), Some(TerminationReason::Crash));
    }
}
