use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::hardware::RobotParams;
use super::map::TileMap;
use super::pose::Pose2;
use super::SimError;
use crate::protocol::{Payload, ProtocolError, Value};

/// What a robot reports about itself each tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub d: f64,
    pub phi: f64,
    pub v_est: f64,
}

impl Observation {
    pub fn to_payload(self) -> Payload {
        let mut p = Payload::new();
        p.insert("d".into(), Value::Float(self.d));
        p.insert("phi".into(), Value::Float(self.phi));
        p.insert("v_est".into(), Value::Float(self.v_est));
        p
    }

    pub fn from_payload(p: &Payload) -> Result<Self, ProtocolError> {
        let get = |k: &str| {
            p.get(k)
                .and_then(Value::as_f64)
                .filter(|v| v.is_finite())
                .ok_or_else(|| ProtocolError::Malformed(format!("observation field {k} missing or not finite")))
        };
        Ok(Self {
            d: get("d")?,
            phi: get("phi")?,
            v_est: get("v_est")?,
        })
    }
}

fn gaussian<R: Rng>(rng: &mut R, std: f64) -> f64 {
    if std > 0.0 {
        Normal::new(0.0, std).expect("finite std").sample(rng)
    } else {
        0.0
    }
}

/// Lane-relative observation with Gaussian noise. `noise_scale` multiplies
/// all noise levels (lighting conditions). The speed estimate uses the
/// lateral noise level in m/s. Three normal draws are taken per call
/// whatever the noise levels, so streams stay aligned across robots.
pub fn sense<R: Rng>(
    pose: &Pose2,
    speed: f64,
    map: &TileMap,
    params: &RobotParams,
    noise_scale: f64,
    rng: &mut R,
) -> Result<Observation, SimError> {
    let lp = map.project(pose)?.point;
    let nd = gaussian(rng, 1.0);
    let nphi = gaussian(rng, 1.0);
    let nv = gaussian(rng, 1.0);
    Ok(Observation {
        d: lp.d + nd * params.sensor_noise_d * noise_scale,
        phi: lp.phi + nphi * params.sensor_noise_phi * noise_scale,
        v_est: speed + nv * params.sensor_noise_d * noise_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn on_lane() -> (TileMap, Pose2) {
        let map = TileMap::from_toml(crate::assets::STANDARD_LOOP).unwrap();
        let pose = Pose2::new(1.5 * 0.6, 0.15 + 0.01, 0.05);
        (map, pose)
    }

    #[test]
    fn no_noise_equals_projection() {
        let (map, pose) = on_lane();
        let mut r = rng::stream(1, "t");
        let obs = sense(&pose, 0.2, &map, &RobotParams::noiseless(), 1.0, &mut r).unwrap();
        let lp = map.project(&pose).unwrap().point;
        assert_eq!((obs.d, obs.phi, obs.v_est), (lp.d, lp.phi, 0.2));
    }

    #[test]
    fn same_state_same_observation() {
        let (map, pose) = on_lane();
        let params = RobotParams::default();
        let a = sense(&pose, 0.2, &map, &params, 1.0, &mut rng::stream(3, "t")).unwrap();
        let b = sense(&pose, 0.2, &map, &params, 1.0, &mut rng::stream(3, "t")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lateral_noise_has_configured_spread() {
        let (map, pose) = on_lane();
        let params = RobotParams::default();
        let mut r = rng::stream(11, "t");
        let ds: Vec<f64> = (0..10_000)
            .map(|_| sense(&pose, 0.0, &map, &params, 1.0, &mut r).unwrap().d)
            .collect();
        let mean = ds.iter().sum::<f64>() / ds.len() as f64;
        let var = ds.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (ds.len() - 1) as f64;
        let std = var.sqrt();
        assert!((0.009..=0.011).contains(&std), "std {std}");
    }

    #[test]
    fn off_road_propagates() {
        let (map, _) = on_lane();
        let r = sense(&Pose2::new(0.9, 0.9, 0.0), 0.0, &map, &RobotParams::default(), 1.0, &mut rng::stream(0, "t"));
        assert!(matches!(r, Err(SimError::NotOnRoad { .. })));
    }

    #[test]
    fn payload_round_trip() {
        let o = Observation { d: 0.01, phi: -0.2, v_est: 0.19 };
        assert_eq!(Observation::from_payload(&o.to_payload()).unwrap(), o);
    }
}
