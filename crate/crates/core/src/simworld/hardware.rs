//! Robot hardware parameters and the distribution they are drawn from.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    /// Wheel separation, metres.
    pub baseline: f64,
    pub wheel_radius_left: f64,
    pub wheel_radius_right: f64,
    pub gain: f64,
    /// Left/right asymmetry; positive speeds up the right wheel.
    pub trim: f64,
    /// Wheel speed at full duty, rad/s.
    pub omega_max: f64,
    /// Seconds between a command arriving and the motors following it.
    pub actuation_delay: f64,
    pub sensor_noise_d: f64,
    pub sensor_noise_phi: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            baseline: 0.1,
            wheel_radius_left: 0.05,
            wheel_radius_right: 0.05,
            gain: 1.0,
            trim: 0.0,
            omega_max: 8.0,
            actuation_delay: 0.05,
            sensor_noise_d: 0.01,
            sensor_noise_phi: 0.05,
        }
    }
}

impl RobotParams {
    /// Ideal robot: nominal geometry, no delay, no noise.
    pub fn noiseless() -> Self {
        Self {
            actuation_delay: 0.0,
            sensor_noise_d: 0.0,
            sensor_noise_phi: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut bad = Vec::new();
        for (name, v) in self.fields() {
            if !v.is_finite() {
                bad.push(format!("{name} is not finite"));
            }
        }
        if self.baseline <= 0.0 {
            bad.push("baseline must be positive".into());
        }
        if self.wheel_radius_left <= 0.0 || self.wheel_radius_right <= 0.0 {
            bad.push("wheel radii must be positive".into());
        }
        if self.trim.abs() >= 1.0 {
            bad.push("|trim| must be below 1".into());
        }
        if self.omega_max <= 0.0 {
            bad.push("omega_max must be positive".into());
        }
        if self.actuation_delay < 0.0 || self.sensor_noise_d < 0.0 || self.sensor_noise_phi < 0.0 {
            bad.push("delay and noise levels must be non-negative".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidDistribution(bad.join("; ")))
        }
    }

    pub fn fields(&self) -> [(&'static str, f64); 9] {
        [
            ("baseline", self.baseline),
            ("wheel_radius_left", self.wheel_radius_left),
            ("wheel_radius_right", self.wheel_radius_right),
            ("gain", self.gain),
            ("trim", self.trim),
            ("omega_max", self.omega_max),
            ("actuation_delay", self.actuation_delay),
            ("sensor_noise_d", self.sensor_noise_d),
            ("sensor_noise_phi", self.sensor_noise_phi),
        ]
    }

    fn field_mut(&mut self, name: &str) -> &mut f64 {
        match name {
            "baseline" => &mut self.baseline,
            "wheel_radius_left" => &mut self.wheel_radius_left,
            "wheel_radius_right" => &mut self.wheel_radius_right,
            "gain" => &mut self.gain,
            "trim" => &mut self.trim,
            "omega_max" => &mut self.omega_max,
            "actuation_delay" => &mut self.actuation_delay,
            "sensor_noise_d" => &mut self.sensor_noise_d,
            "sensor_noise_phi" => &mut self.sensor_noise_phi,
            _ => unreachable!("unknown field {name}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldDist {
    pub mean: f64,
    #[serde(default)]
    pub std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl FieldDist {
    pub fn fixed(mean: f64) -> Self {
        Self { mean, std: 0.0, min: None, max: None }
    }

    pub fn bounded(mean: f64, std: f64, min: f64, max: f64) -> Self {
        Self { mean, std, min: Some(min), max: Some(max) }
    }

    /// Smallest and largest value a draw can take.
    fn support(&self) -> (f64, f64) {
        if self.std == 0.0 {
            (self.mean, self.mean)
        } else {
            (self.min.unwrap_or(f64::NEG_INFINITY), self.max.unwrap_or(f64::INFINITY))
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        let v = if self.std > 0.0 {
            Normal::new(self.mean, self.std).expect("validated std").sample(rng)
        } else {
            self.mean
        };
        v.clamp(self.min.unwrap_or(f64::NEG_INFINITY), self.max.unwrap_or(f64::INFINITY))
    }
}

/// Per-field `(mean, std, min, max)` for every [`RobotParams`] field. Draws
/// are Gaussian, clamped to the bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareDistribution {
    pub baseline: FieldDist,
    pub wheel_radius_left: FieldDist,
    pub wheel_radius_right: FieldDist,
    pub gain: FieldDist,
    pub trim: FieldDist,
    pub omega_max: FieldDist,
    pub actuation_delay: FieldDist,
    pub sensor_noise_d: FieldDist,
    pub sensor_noise_phi: FieldDist,
}

impl Default for HardwareDistribution {
    fn default() -> Self {
        Self {
            baseline: FieldDist::bounded(0.1, 0.002, 0.09, 0.11),
            wheel_radius_left: FieldDist::bounded(0.05, 0.001, 0.045, 0.055),
            wheel_radius_right: FieldDist::bounded(0.05, 0.001, 0.045, 0.055),
            gain: FieldDist::bounded(1.0, 0.05, 0.8, 1.2),
            trim: FieldDist::bounded(0.0, 0.05, -0.15, 0.15),
            omega_max: FieldDist::fixed(8.0),
            actuation_delay: FieldDist::bounded(0.05, 0.01, 0.0, 0.1),
            sensor_noise_d: FieldDist::fixed(0.01),
            sensor_noise_phi: FieldDist::fixed(0.05),
        }
    }
}

impl HardwareDistribution {
    /// Every field fixed at `params`.
    pub fn degenerate(params: &RobotParams) -> Self {
        let f = |v| FieldDist::fixed(v);
        Self {
            baseline: f(params.baseline),
            wheel_radius_left: f(params.wheel_radius_left),
            wheel_radius_right: f(params.wheel_radius_right),
            gain: f(params.gain),
            trim: f(params.trim),
            omega_max: f(params.omega_max),
            actuation_delay: f(params.actuation_delay),
            sensor_noise_d: f(params.sensor_noise_d),
            sensor_noise_phi: f(params.sensor_noise_phi),
        }
    }

    pub fn means(&self) -> RobotParams {
        let mut p = RobotParams::default();
        for (name, d) in self.fields() {
            *p.field_mut(name) = d.mean;
        }
        p
    }

    pub fn fields(&self) -> [(&'static str, &FieldDist); 9] {
        [
            ("baseline", &self.baseline),
            ("wheel_radius_left", &self.wheel_radius_left),
            ("wheel_radius_right", &self.wheel_radius_right),
            ("gain", &self.gain),
            ("trim", &self.trim),
            ("omega_max", &self.omega_max),
            ("actuation_delay", &self.actuation_delay),
            ("sensor_noise_d", &self.sensor_noise_d),
            ("sensor_noise_phi", &self.sensor_noise_phi),
        ]
    }

    /// Checks that every value a draw can produce is a valid parameter.
    pub fn validate(&self) -> Result<(), SimError> {
        let mut bad = Vec::new();
        for (name, d) in self.fields() {
            if !d.mean.is_finite() || !d.std.is_finite() || d.std < 0.0 {
                bad.push(format!("{name}: mean and std must be finite, std non-negative"));
                continue;
            }
            if let (Some(lo), Some(hi)) = (d.min, d.max) {
                if lo > hi {
                    bad.push(format!("{name}: min {lo} exceeds max {hi}"));
                    continue;
                }
            }
            let (lo, hi) = d.support();
            let ok = match name {
                "baseline" | "wheel_radius_left" | "wheel_radius_right" | "omega_max" => lo > 0.0,
                "trim" => lo > -1.0 && hi < 1.0,
                "actuation_delay" | "sensor_noise_d" | "sensor_noise_phi" => lo >= 0.0,
                _ => true,
            };
            if !ok {
                bad.push(format!("{name}: bounds [{lo}, {hi}] allow invalid values"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidDistribution(bad.join("; ")))
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let d: Self = toml::from_str(text).map_err(|e| SimError::InvalidDistribution(e.to_string()))?;
        d.validate()?;
        Ok(d)
    }
}

/// Draws one robot. Fields are sampled in declaration order from a stream
/// derived from `seed`, so the result depends only on `(dist, seed)`.
pub fn sample_hardware(dist: &HardwareDistribution, seed: u64) -> Result<RobotParams, SimError> {
    dist.validate()?;
    let mut rng = rng::stream(seed, "hardware");
    let mut p = RobotParams::default();
    for (name, d) in dist.fields() {
        *p.field_mut(name) = d.draw(&mut rng);
    }
    p.validate()?;
    Ok(p)
}
