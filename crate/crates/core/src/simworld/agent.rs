use serde::{Deserialize, Serialize};

use super::sensing::Observation;
use crate::protocol::{Agent, DutyCommand, MessageEnvelope, Payload, ProtocolError};

/// Lane-following controller gains plus the nominal wheel geometry used to
/// turn a body twist into duty cycles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineGains {
    pub k_d: f64,
    pub k_phi: f64,
    pub v_nominal: f64,
    pub wheel_radius: f64,
    pub baseline: f64,
    pub omega_max: f64,
}

impl Default for BaselineGains {
    fn default() -> Self {
        Self {
            k_d: 31.0,
            k_phi: 5.0,
            v_nominal: 0.2,
            wheel_radius: 0.05,
            baseline: 0.1,
            omega_max: 8.0,
        }
    }
}

/// `ω = −k_d·d − k_phi·φ` around a constant forward speed, mapped onto the
/// two wheels and clamped.
pub fn baseline_agent(obs: &Observation, gains: &BaselineGains) -> DutyCommand {
    let omega = -gains.k_d * obs.d - gains.k_phi * obs.phi;
    let full = gains.wheel_radius * gains.omega_max;
    let half = omega * gains.baseline / 2.0;
    DutyCommand::new((gains.v_nominal - half) / full, (gains.v_nominal + half) / full).clamped()
}

/// [`baseline_agent`] as a protocol agent.
#[derive(Debug, Clone, Default)]
pub struct BaselineAgent {
    pub gains: BaselineGains,
}

impl Agent for BaselineAgent {
    fn act(&mut self, observation: &MessageEnvelope) -> Result<Payload, ProtocolError> {
        let obs = Observation::from_payload(&observation.payload)?;
        Ok(baseline_agent(&obs, &self.gains).to_payload())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::{step_dynamics, Pose2, RobotParams};

    #[test]
    fn centered_drives_straight() {
        let c = baseline_agent(&Observation { d: 0.0, phi: 0.0, v_est: 0.0 }, &BaselineGains::default());
        assert_eq!(c.u_l, c.u_r);
        assert!((c.u_l - 0.5).abs() < 1e-15);
    }

    #[test]
    fn left_of_center_steers_right() {
        let c = baseline_agent(&Observation { d: 0.03, phi: 0.0, v_est: 0.0 }, &BaselineGains::default());
        assert!(c.u_r < c.u_l);
    }

    #[test]
    fn outputs_are_clamped() {
        let c = baseline_agent(&Observation { d: 5.0, phi: 0.0, v_est: 0.0 }, &BaselineGains::default());
        assert!(c.u_l <= 1.0 && c.u_r >= -1.0);
    }

    #[test]
    fn closed_loop_recovers_offset_on_a_straight() {
        // infinite straight along +x; d is simply y
        let params = RobotParams::noiseless();
        let gains = BaselineGains::default();
        let mut pose = Pose2::new(0.0, 0.05, 0.0);
        for _ in 0..30 {
            let obs = Observation { d: pose.y, phi: pose.theta, v_est: 0.0 };
            pose = step_dynamics(&pose, baseline_agent(&obs, &gains), &params, 0.1);
        }
        assert!(pose.y.abs() < 0.005, "d after 3 s: {}", pose.y);
    }
}
