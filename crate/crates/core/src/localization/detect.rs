use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LocError;
use crate::protocol::{Payload, Value};
use crate::simworld::map::centerline_samples;
use crate::simworld::{interpolate, Pose2, TileMap, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Watchtower {
    pub id: u32,
    pub pose: Pose2,
    pub fov_radius: f64,
}

impl Watchtower {
    pub fn sees(&self, p: &Pose2) -> bool {
        self.pose.distance(p) <= self.fov_radius
    }
}

/// One relative-pose measurement of `target_id` in the frame of `observer_id`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub observer_id: u32,
    pub target_id: u32,
    pub t: f64,
    pub z: Pose2,
    /// Information matrix (inverse covariance) of `z` as `[x, y, theta]`.
    pub info: [[f64; 3]; 3],
}

impl Detection {
    pub fn to_value(&self) -> Value {
        let mut m = Payload::new();
        m.insert("observer".into(), Value::from(self.observer_id as u64));
        m.insert("target".into(), Value::from(self.target_id as u64));
        m.insert("t".into(), Value::Float(self.t));
        m.insert(
            "z".into(),
            Value::Array(vec![Value::Float(self.z.x), Value::Float(self.z.y), Value::Float(self.z.theta)]),
        );
        let info = self.info.iter().flatten().map(|&v| Value::Float(v)).collect();
        m.insert("info".into(), Value::Array(info));
        Value::Map(m)
    }

    pub fn from_value(v: &Value) -> Result<Self, LocError> {
        let bad = |what: &str| LocError::Malformed(what.to_string());
        let m = v.as_map().ok_or_else(|| bad("not a map"))?;
        let id = |k: &str| {
            m.get(k)
                .and_then(Value::as_u64)
                .and_then(|v| u32::try_from(v).ok())
                .ok_or_else(|| bad(k))
        };
        let floats = |k: &str, n: usize| -> Result<Vec<f64>, LocError> {
            let a = m.get(k).and_then(Value::as_array).ok_or_else(|| bad(k))?;
            let out: Option<Vec<f64>> = a.iter().map(Value::as_f64).collect();
            out.filter(|v| v.len() == n).ok_or_else(|| bad(k))
        };
        let z = floats("z", 3)?;
        let i = floats("info", 9)?;
        Ok(Self {
            observer_id: id("observer")?,
            target_id: id("target")?,
            t: m.get("t").and_then(Value::as_f64).ok_or_else(|| bad("t"))?,
            z: Pose2::new(z[0], z[1], z[2]),
            info: [[i[0], i[1], i[2]], [i[3], i[4], i[5]], [i[6], i[7], i[8]]],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionNoise {
    pub sigma_xy: f64,
    pub sigma_theta: f64,
}

impl DetectionNoise {
    /// Diagonal information; exact detections get a finite but very large
    /// weight.
    pub fn info(&self) -> [[f64; 3]; 3] {
        let w = |s: f64| 1.0 / s.max(1e-6).powi(2);
        let (a, b) = (w(self.sigma_xy), w(self.sigma_theta));
        [[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, b]]
    }
}

/// One tower over every drivable tile centre.
pub fn auto_towers(map: &TileMap, fov_tiles: f64) -> Vec<Watchtower> {
    map.drivable_tiles()
        .enumerate()
        .map(|(k, (gx, gy))| {
            let c = map.tile_center(gx, gy);
            Watchtower {
                id: 1000 + k as u32,
                pose: Pose2::new(c[0], c[1], map.origin().theta),
                fov_radius: fov_tiles * map.tile_size(),
            }
        })
        .collect()
}

/// Centerline points no tower can see.
pub fn coverage_gaps(map: &TileMap, towers: &[Watchtower]) -> Vec<Pose2> {
    centerline_samples(map, 0.05)
        .into_iter()
        .filter(|p| !towers.iter().any(|t| t.sees(p)))
        .collect()
}

fn noise<R: Rng>(rng: &mut R, std: f64) -> f64 {
    if std > 0.0 {
        Normal::new(0.0, std).expect("finite std").sample(rng)
    } else {
        0.0
    }
}

/// Samples every trajectory at `k / rate` over its time span (end
/// excluded) and lets each tower that sees the target report it.
pub fn simulate_detections<R: Rng>(
    truth: &BTreeMap<u32, Trajectory>,
    towers: &[Watchtower],
    rate: f64,
    noise_level: DetectionNoise,
    rng: &mut R,
) -> Result<Vec<Detection>, LocError> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(LocError::InvalidConfig(format!("detection rate {rate} must be positive")));
    }
    let info = noise_level.info();
    let mut out = Vec::new();
    for (&target, traj) in truth {
        let (first, last) = match (traj.first(), traj.last()) {
            (Some(a), Some(b)) => (a.t, b.t),
            _ => return Err(LocError::EmptyTrajectory(target)),
        };
        let k0 = (first * rate - 1e-9).ceil() as i64;
        let times: Vec<f64> = if last > first {
            (k0..)
                .map(|k| k as f64 / rate)
                .take_while(|t| *t < last - 1e-9)
                .collect()
        } else {
            vec![first]
        };
        for t in times {
            let pose = interpolate(traj, t);
            for tower in towers.iter().filter(|tw| tw.sees(&pose)) {
                let z = tower.pose.between(&pose);
                let z = Pose2::new(
                    z.x + noise(rng, noise_level.sigma_xy),
                    z.y + noise(rng, noise_level.sigma_xy),
                    z.theta + noise(rng, noise_level.sigma_theta),
                );
                out.push(Detection {
                    observer_id: tower.id,
                    target_id: target,
                    t,
                    z,
                    info,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::TimedPose;

    fn still(p: Pose2, secs: f64) -> BTreeMap<u32, Trajectory> {
        let mut m = BTreeMap::new();
        m.insert(7, vec![TimedPose { t: 0.0, pose: p }, TimedPose { t: secs, pose: p }]);
        m
    }

    fn tower(fov: f64) -> Watchtower {
        Watchtower { id: 1, pose: Pose2::new(0.0, 0.0, 0.3), fov_radius: fov }
    }

    #[test]
    fn out_of_view_is_not_detected() {
        let mut rng = crate::rng::stream(0, "t");
        let noise = DetectionNoise { sigma_xy: 0.0, sigma_theta: 0.0 };
        let d = simulate_detections(&still(Pose2::new(2.0, 0.0, 0.0), 1.0), &[tower(1.0)], 10.0, noise, &mut rng).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn exact_detection_is_relative_pose() {
        let mut rng = crate::rng::stream(0, "t");
        let noise = DetectionNoise { sigma_xy: 0.0, sigma_theta: 0.0 };
        let target = Pose2::new(0.4, 0.3, 1.0);
        let d = simulate_detections(&still(target, 1.0), &[tower(1.0)], 10.0, noise, &mut rng).unwrap();
        let expect = tower(1.0).pose.inverse().compose(&target);
        assert_eq!(d.len(), 10);
        for det in d {
            assert!((det.z.x - expect.x).abs() < 1e-15);
            assert!((det.z.y - expect.y).abs() < 1e-15);
            assert!((det.z.theta - expect.theta).abs() < 1e-15);
        }
    }

    #[test]
    fn value_round_trip() {
        let det = Detection {
            observer_id: 3,
            target_id: 9,
            t: 0.7,
            z: Pose2::new(0.1, -0.2, 0.3),
            info: DetectionNoise { sigma_xy: 0.01, sigma_theta: 0.02 }.info(),
        };
        assert_eq!(Detection::from_value(&det.to_value()).unwrap(), det);
    }

    #[test]
    fn standard_loop_is_fully_covered() {
        let map = TileMap::from_toml(crate::assets::STANDARD_LOOP).unwrap();
        let towers = auto_towers(&map, 0.75);
        assert_eq!(towers.len(), 10);
        assert!(coverage_gaps(&map, &towers).is_empty());
        assert!(!coverage_gaps(&map, &towers[..3]).is_empty());
    }
}
