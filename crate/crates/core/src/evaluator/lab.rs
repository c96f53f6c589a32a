use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::localization::LocalizationConfig;
use crate::rng;
use crate::simworld::{Conditions, Pose2};

/// One simulated lab: its lighting and network, how well its towers see,
/// and how precisely robots are placed at the start line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabProfile {
    pub id: String,
    #[serde(default)]
    pub conditions: Conditions,
    /// Detection noise of this lab's towers; the benchmark's when absent.
    #[serde(default)]
    pub sigma_xy: Option<f64>,
    #[serde(default)]
    pub sigma_theta: Option<f64>,
    /// Standard deviation of the start placement error in x, y, theta.
    #[serde(default)]
    pub start_jitter: [f64; 3],
}

impl Default for LabProfile {
    fn default() -> Self {
        Self {
            id: "sim-lab".to_string(),
            conditions: Conditions::default(),
            sigma_xy: None,
            sigma_theta: None,
            start_jitter: [0.0; 3],
        }
    }
}

impl LabProfile {
    pub fn from_toml(text: &str) -> Result<Self, EvalError> {
        let lab: Self = toml::from_str(text).map_err(|e| EvalError::Lab(e.to_string()))?;
        lab.validate()?;
        Ok(lab)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let c = &self.conditions;
        let ok = c.illumination > 0.0
            && [c.flicker, c.latency, c.latency_jitter].iter().all(|v| *v >= 0.0 && v.is_finite())
            && self.sigma_xy.is_none_or(|s| s >= 0.0)
            && self.sigma_theta.is_none_or(|s| s >= 0.0)
            && self.start_jitter.iter().all(|v| *v >= 0.0 && v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(EvalError::Lab(format!("lab {:?} has negative or non-finite settings", self.id)))
        }
    }

    pub fn localization(&self, base: &LocalizationConfig) -> LocalizationConfig {
        LocalizationConfig {
            sigma_xy: self.sigma_xy.unwrap_or(base.sigma_xy),
            sigma_theta: self.sigma_theta.unwrap_or(base.sigma_theta),
            ..*base
        }
    }

    /// Where the robot actually ends up when placed at `nominal`.
    pub fn place(&self, nominal: Pose2, seed: u64) -> Pose2 {
        let mut r = rng::stream(seed, "start");
        let mut draw = |std: f64| {
            let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(&mut r);
            std * z
        };
        let (dx, dy, dt) = (draw(self.start_jitter[0]), draw(self.start_jitter[1]), draw(self.start_jitter[2]));
        Pose2::new(nominal.x + dx, nominal.y + dy, nominal.theta + dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lab_places_exactly() {
        let p = Pose2::new(0.6, 0.15, 0.0);
        assert_eq!(LabProfile::default().place(p, 9), p);
    }

    #[test]
    fn jitter_moves_the_start_reproducibly() {
        let lab = LabProfile { start_jitter: [0.01, 0.01, 0.02], ..Default::default() };
        let p = Pose2::new(0.6, 0.15, 0.0);
        assert_ne!(lab.place(p, 1), p);
        assert_eq!(lab.place(p, 1), lab.place(p, 1));
        assert_ne!(lab.place(p, 1), lab.place(p, 2));
    }

    #[test]
    fn parses_and_overrides_noise() {
        let lab = LabProfile::from_toml("id = \"b\"\nsigma_xy = 0.02\n[conditions]\nillumination = 0.8\n").unwrap();
        let l = lab.localization(&LocalizationConfig::default());
        assert_eq!(l.sigma_xy, 0.02);
        assert_eq!(l.sigma_theta, LocalizationConfig::default().sigma_theta);
        assert!(LabProfile::from_toml("id = \"c\"\nstart_jitter = [-1.0, 0.0, 0.0]\n").is_err());
    }
}
