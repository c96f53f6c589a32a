use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::score::ScoringEntry;
use super::BenchmarkError;
use crate::digest::canonical_digest;
use crate::localization::LocalizationConfig;
use crate::simworld::{HardwareDistribution, Pose2, RobotParams, TerminationConfig, TerminationReason, TileMap};

/// Metrics the evaluator computes for every episode.
pub const PRODUCED_METRICS: [&str; 6] = ["survival_time", "distance", "mpd_mean", "mpd_abs", "mod_mean", "mod_abs"];

/// Name of the map shipped with the crate.
pub const BUILTIN_MAP: &str = "standard_loop";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedPolicy {
    #[serde(default)]
    pub base: u64,
    /// Per-episode offsets; episode `k` uses `k` when empty.
    #[serde(default)]
    pub offsets: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartPose {
    pub start: [f64; 3],
}

impl StartPose {
    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.start[0], self.start[1], self.start[2])
    }
}

/// Admissible lab conditions during an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentBands {
    pub illumination: [f64; 2],
    /// Largest injected command latency, seconds.
    pub latency_budget: f64,
}

impl Default for EnvironmentBands {
    fn default() -> Self {
        Self { illumination: [0.5, 1.5], latency_budget: 0.1 }
    }
}

fn default_rate() -> f64 {
    10.0
}

fn default_requires() -> Vec<String> {
    vec!["sim".to_string()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub id: String,
    #[serde(default)]
    pub description: String,
    /// Built-in map name or a path relative to the spec file.
    pub map: String,
    pub episodes: u32,
    #[serde(default)]
    pub seeds: SeedPolicy,
    /// Evaluator capabilities needed to run this benchmark.
    #[serde(default = "default_requires")]
    pub requires: Vec<String>,
    #[serde(default = "default_rate")]
    pub control_rate: f64,
    pub active: StartPose,
    #[serde(default)]
    pub passive: Vec<StartPose>,
    #[serde(default)]
    pub termination: TerminationConfig,
    #[serde(default)]
    pub hardware: HardwareDistribution,
    /// Closed interval per hardware field checked before running.
    #[serde(default)]
    pub compliance: BTreeMap<String, [f64; 2]>,
    pub metrics: Vec<String>,
    pub scoring: Vec<ScoringEntry>,
    #[serde(default)]
    pub environment: EnvironmentBands,
    #[serde(default)]
    pub localization: LocalizationConfig,
    /// Termination reasons that disqualify a submission from scoring.
    #[serde(default)]
    pub disqualify_on: Vec<String>,
}

impl BenchmarkSpec {
    /// Parses without validating.
    pub fn parse(text: &str) -> Result<Self, BenchmarkError> {
        toml::from_str(text).map_err(|e| BenchmarkError::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, BenchmarkError> {
        let spec = Self::parse(text)?;
        validate_spec(&spec).map_err(BenchmarkError::Invalid)?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain data")
    }

    pub fn digest(&self) -> String {
        canonical_digest(self)
    }

    pub fn episode_seed(&self, master: u64, episode: u32) -> u64 {
        let offset = self.seeds.offsets.get(episode as usize).copied().unwrap_or(episode as u64);
        self.seeds.base.wrapping_add(master).wrapping_add(offset)
    }

    pub fn disqualifies(&self, reason: TerminationReason) -> bool {
        self.disqualify_on.iter().any(|r| r == reason.as_str())
    }

    /// Loads the map named by the spec; paths are taken relative to `base`.
    pub fn load_map(&self, base: Option<&Path>) -> Result<TileMap, BenchmarkError> {
        let text = if self.map == BUILTIN_MAP {
            crate::assets::STANDARD_LOOP.to_string()
        } else {
            let path = base.map_or_else(|| Path::new(&self.map).to_path_buf(), |b| b.join(&self.map));
            std::fs::read_to_string(&path).map_err(|e| BenchmarkError::Map(format!("{}: {e}", path.display())))?
        };
        TileMap::from_toml(&text).map_err(|e| BenchmarkError::Map(e.to_string()))
    }
}

/// Checks every structural rule and returns all violations together.
pub fn validate_spec(spec: &BenchmarkSpec) -> Result<(), Vec<String>> {
    let mut issues = Vec::new();
    if spec.id.trim().is_empty() {
        issues.push("id is empty".to_string());
    }
    if spec.episodes < 1 {
        issues.push("episodes must be at least 1".to_string());
    }
    if !spec.seeds.offsets.is_empty() && spec.seeds.offsets.len() != spec.episodes as usize {
        issues.push(format!(
            "seeds.offsets has {} entries for {} episodes",
            spec.seeds.offsets.len(),
            spec.episodes
        ));
    }
    if !(spec.control_rate > 0.0 && spec.control_rate.is_finite()) {
        issues.push(format!("control_rate {} must be positive", spec.control_rate));
    }
    let mut names = BTreeSet::new();
    for m in &spec.metrics {
        if !names.insert(m.as_str()) {
            issues.push(format!("metric {m:?} listed twice"));
        }
        if !PRODUCED_METRICS.contains(&m.as_str()) {
            issues.push(format!("metric {m:?} is not produced by the evaluator"));
        }
    }
    if spec.scoring.is_empty() {
        issues.push("scoring is empty".to_string());
    }
    let mut scored = BTreeSet::new();
    for (i, e) in spec.scoring.iter().enumerate() {
        if !names.contains(e.metric.as_str()) {
            issues.push(format!("scoring entry {i} references unknown metric {:?}", e.metric));
        }
        if !scored.insert(e.metric.as_str()) {
            issues.push(format!("scoring entry {i} repeats metric {:?}", e.metric));
        }
        if !(e.tolerance >= 0.0 && e.tolerance.is_finite()) {
            issues.push(format!("scoring entry {i} has invalid tolerance {}", e.tolerance));
        }
    }
    let t = &spec.termination;
    for (name, v) in [
        ("half_width", t.half_width),
        ("crash_window", t.crash_window),
        ("time_limit", t.time_limit),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            issues.push(format!("termination.{name} must be positive"));
        }
    }
    if !(t.crash_speed >= 0.0 && t.crash_speed.is_finite()) {
        issues.push("termination.crash_speed must be non-negative".to_string());
    }
    for (k, p) in std::iter::once(&spec.active).chain(&spec.passive).enumerate() {
        if !p.start.iter().all(|v| v.is_finite()) {
            issues.push(format!("robot {k} start pose is not finite"));
        }
    }
    if let Err(e) = spec.hardware.validate() {
        issues.push(format!("hardware: {e}"));
    }
    let fields: Vec<&str> = RobotParams::default().fields().iter().map(|f| f.0).collect();
    for (k, [lo, hi]) in &spec.compliance {
        if !fields.contains(&k.as_str()) {
            issues.push(format!("compliance names unknown hardware field {k:?}"));
        }
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            issues.push(format!("compliance interval for {k:?} is empty or not finite"));
        }
    }
    let [lo, hi] = spec.environment.illumination;
    if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
        issues.push("environment.illumination band is invalid".to_string());
    }
    if !(spec.environment.latency_budget >= 0.0 && spec.environment.latency_budget.is_finite()) {
        issues.push("environment.latency_budget must be non-negative".to_string());
    }
    let l = &spec.localization;
    if !(l.rate_hz > 0.0 && l.keyframe_dt > 0.0 && l.sigma_xy >= 0.0 && l.sigma_theta >= 0.0) {
        issues.push("localization settings must be positive".to_string());
    }
    for r in &spec.disqualify_on {
        if r.parse::<TerminationReason>().is_err() {
            issues.push(format!("disqualify_on names unknown termination reason {r:?}"));
        }
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(issues)
    }
}
