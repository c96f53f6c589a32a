use std::collections::VecDeque;

use super::hardware::RobotParams;
use super::pose::Pose2;
use crate::protocol::DutyCommand;

/// Body speed `v` (m/s) and turn rate `ω` (rad/s) produced by a duty pair.
pub fn body_twist(cmd: DutyCommand, params: &RobotParams) -> (f64, f64) {
    let scale = params.omega_max * params.gain;
    let v_l = params.wheel_radius_left * scale * (1.0 - params.trim) * cmd.u_l;
    let v_r = params.wheel_radius_right * scale * (1.0 + params.trim) * cmd.u_r;
    ((v_l + v_r) / 2.0, (v_r - v_l) / params.baseline)
}

/// Advances `pose` along the exact arc driven by a constant twist.
pub fn integrate_arc(pose: &Pose2, v: f64, omega: f64, dt: f64) -> Pose2 {
    let (s0, c0) = pose.theta.sin_cos();
    let wdt = omega * dt;
    if wdt.abs() < 1e-9 {
        // second-order series of the arc; exact to rounding at this size
        let th = pose.theta + 0.5 * wdt;
        let (s, c) = th.sin_cos();
        return Pose2::new(pose.x + v * dt * c, pose.y + v * dt * s, pose.theta + wdt);
    }
    let (s1, c1) = (pose.theta + wdt).sin_cos();
    let r = v / omega;
    Pose2::new(pose.x + r * (s1 - s0), pose.y - r * (c1 - c0), pose.theta + wdt)
}

/// One step of a robot holding `cmd` for `dt` seconds.
pub fn step_dynamics(pose: &Pose2, cmd: DutyCommand, params: &RobotParams, dt: f64) -> Pose2 {
    let (v, omega) = body_twist(cmd.clamped(), params);
    integrate_arc(pose, v, omega, dt)
}

/// A robot body with delayed actuation: a command issued at `t` starts
/// driving the wheels at `t + actuation_delay` and stays latched until the
/// next one takes over.
#[derive(Debug, Clone)]
pub struct DiffDrive {
    pub params: RobotParams,
    pub pose: Pose2,
    pub time: f64,
    applied: DutyCommand,
    pending: VecDeque<(f64, DutyCommand)>,
}

impl DiffDrive {
    pub fn new(params: RobotParams, pose: Pose2) -> Self {
        Self {
            params,
            pose,
            time: 0.0,
            applied: DutyCommand::default(),
            pending: VecDeque::new(),
        }
    }

    pub fn applied(&self) -> DutyCommand {
        self.applied
    }

    /// Current body speed.
    pub fn speed(&self) -> f64 {
        body_twist(self.applied, &self.params).0
    }

    pub fn command(&mut self, cmd: DutyCommand) {
        self.command_after(cmd, 0.0);
    }

    /// Issues `cmd` with `extra` seconds of transport latency on top of the
    /// actuation delay. Commands never overtake earlier ones.
    pub fn command_after(&mut self, cmd: DutyCommand, extra: f64) {
        let mut at = self.time + self.params.actuation_delay + extra.max(0.0);
        if let Some(&(last, _)) = self.pending.back() {
            at = at.max(last);
        }
        self.pending.push_back((at, cmd.clamped()));
    }

    pub fn advance(&mut self, dt: f64) {
        let end = self.time + dt;
        loop {
            while let Some(&(at, cmd)) = self.pending.front() {
                if at <= self.time {
                    self.applied = cmd;
                    self.pending.pop_front();
                } else {
                    break;
                }
            }
            let until = match self.pending.front() {
                Some(&(at, _)) if at < end => at,
                _ => end,
            };
            if until > self.time {
                self.pose = step_dynamics(&self.pose, self.applied, &self.params, until - self.time);
            }
            self.time = until;
            if until >= end {
                break;
            }
        }
        self.time = end;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn example_params() -> RobotParams {
        RobotParams {
            omega_max: 4.0,
            ..RobotParams::noiseless()
        }
    }

    fn close(p: Pose2, x: f64, y: f64, th: f64, tol: f64) {
        assert!((p.x - x).abs() < tol && (p.y - y).abs() < tol && (p.theta - th).abs() < tol, "{p:?}");
    }

    #[test]
    fn straight_line() {
        let p = step_dynamics(&Pose2::identity(), DutyCommand::new(0.5, 0.5), &example_params(), 1.0);
        close(p, 0.1, 0.0, 0.0, 1e-15);
        assert_eq!((p.y, p.theta), (0.0, 0.0));
    }

    #[test]
    fn spin_in_place() {
        let p = step_dynamics(&Pose2::identity(), DutyCommand::new(-0.5, 0.5), &example_params(), 0.1);
        close(p, 0.0, 0.0, 0.2, 1e-15);
    }

    #[test]
    fn arc_matches_closed_form() {
        let p = step_dynamics(&Pose2::identity(), DutyCommand::new(0.0, 0.5), &example_params(), 0.2);
        // independent oracle: v = 0.05, w = 1
        let (v, w, t) = (0.05f64, 1.0f64, 0.2f64);
        close(p, (v / w) * (w * t).sin(), (v / w) * (1.0 - (w * t).cos()), 0.2, 1e-15);
        close(p, 0.0099335, 0.0009967, 0.2, 1e-7);
    }

    #[test]
    fn trim_and_radius_enter_wheel_speeds() {
        let params = RobotParams {
            trim: 0.1,
            wheel_radius_right: 0.06,
            ..example_params()
        };
        let (v, w) = body_twist(DutyCommand::new(1.0, 1.0), &params);
        let v_l = 0.05 * 4.0 * 0.9;
        let v_r = 0.06 * 4.0 * 1.1;
        assert!((v - (v_l + v_r) / 2.0).abs() < 1e-15);
        assert!((w - (v_r - v_l) / 0.1).abs() < 1e-12);
    }

    #[test]
    fn delayed_command_takes_effect_late() {
        let params = RobotParams {
            actuation_delay: 0.05,
            ..example_params()
        };
        let mut bot = DiffDrive::new(params, Pose2::identity());
        bot.command(DutyCommand::new(0.5, 0.5));
        bot.advance(0.1);
        // 0.05 s stopped, 0.05 s at 0.1 m/s
        close(bot.pose, 0.005, 0.0, 0.0, 1e-15);
        assert_eq!(bot.applied(), DutyCommand::new(0.5, 0.5));
    }

    fn duty() -> impl Strategy<Value = f64> {
        -1.0..1.0f64
    }

    proptest! {
        #[test]
        fn two_half_steps_equal_one_step(
            ul in duty(), ur in duty(), dt in 0.001..1.0f64,
            x in -3.0..3.0f64, y in -3.0..3.0f64, th in -3.1..3.1f64,
        ) {
            let params = RobotParams::noiseless();
            let start = Pose2::new(x, y, th);
            let cmd = DutyCommand::new(ul, ur);
            let once = step_dynamics(&start, cmd, &params, 2.0 * dt);
            let twice = step_dynamics(&step_dynamics(&start, cmd, &params, dt), cmd, &params, dt);
            prop_assert!((once.x - twice.x).abs() < 1e-12);
            prop_assert!((once.y - twice.y).abs() < 1e-12);
            prop_assert!(super::super::normalize_angle(once.theta - twice.theta).abs() < 1e-12);
        }

        #[test]
        fn equal_duties_without_trim_stay_on_axis(u in duty(), n in 1usize..200) {
            let params = RobotParams::noiseless();
            let mut p = Pose2::identity();
            for _ in 0..n {
                p = step_dynamics(&p, DutyCommand::new(u, u), &params, 0.1);
            }
            prop_assert_eq!(p.y, 0.0);
            prop_assert_eq!(p.theta, 0.0);
        }
    }
}
