//! Repeatability studies: the same agent driven repeatedly on one robot,
//! on several robots, and in two labs, compared by the across-run spread of
//! lane offsets.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets;
use crate::benchmark::BenchmarkSpec;
use crate::evaluator::{
    compliance_check, run_episode, EpisodeSetup, EpisodeStatus, LabProfile, Launcher, ResolvedAgent,
};
use crate::metrics::{lane_series, study_table, LaneSeries, MetricsError, StudyTable, DEFAULT_BIN_WIDTH};
use crate::par;
use crate::rng::derive_seed;
use crate::simworld::{sample_hardware, HardwareDistribution, RobotParams, TerminationReason, TileMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    SameRobot,
    InterRobot,
    CrossLab,
}

impl StudyKind {
    pub const ALL: [StudyKind; 3] = [StudyKind::SameRobot, StudyKind::InterRobot, StudyKind::CrossLab];

    pub fn as_str(self) -> &'static str {
        match self {
            StudyKind::SameRobot => "same_robot",
            StudyKind::InterRobot => "inter_robot",
            StudyKind::CrossLab => "cross_lab",
        }
    }
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StudyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StudyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown study {s:?}"))
    }
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("invalid study configuration: {0}")]
    Config(String),
    #[error("run {run} of {group} did not complete: {reason}")]
    Run { group: String, run: usize, reason: String, partial: Box<StudyData> },
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
}

/// Archived fleet used by the shipped studies.
pub const DEFAULT_FLEET_SEED: u64 = 1;

#[derive(Debug, Clone)]
pub struct StudyConfig {
    /// Supplies the map, start line, hardware distribution, termination
    /// and localization settings.
    pub spec: BenchmarkSpec,
    /// Lab of the single-lab studies, and the first lab of the cross-lab one.
    pub home_lab: LabProfile,
    pub other_lab: LabProfile,
    pub same_robot_runs: usize,
    pub inter_robot_robots: usize,
    pub inter_robot_runs: usize,
    pub cross_lab_runs_per_lab: usize,
    /// Seed of the robot fleet. Robot hardware is drawn from it, so repeated
    /// studies with different master seeds reuse the same robots.
    pub fleet_seed: u64,
    /// Seed of everything that changes from run to run.
    pub master_seed: u64,
    pub bin_width: f64,
}

impl StudyConfig {
    /// Nine runs on one robot, three runs on each of three robots, and six
    /// runs in each of two labs, one robot per lab. The home lab's first
    /// robot takes part in all three studies.
    pub fn standard(master_seed: u64) -> Self {
        let mut spec = BenchmarkSpec::from_toml(assets::LF_SIM).expect("shipped benchmark");
        spec.passive.clear();
        spec.termination.time_limit = 35.0;
        Self {
            spec,
            home_lab: LabProfile::from_toml(assets::LAB_A).expect("shipped lab"),
            other_lab: LabProfile::from_toml(assets::LAB_B).expect("shipped lab"),
            same_robot_runs: 9,
            inter_robot_robots: 3,
            inter_robot_runs: 3,
            cross_lab_runs_per_lab: 6,
            fleet_seed: DEFAULT_FLEET_SEED,
            master_seed,
            bin_width: DEFAULT_BIN_WIDTH,
        }
    }

    /// The standard layout with every noise source removed.
    pub fn noiseless(master_seed: u64) -> Self {
        let mut cfg = Self::standard(master_seed);
        cfg.spec.hardware = HardwareDistribution::degenerate(&RobotParams::noiseless());
        for lab in [&mut cfg.home_lab, &mut cfg.other_lab] {
            lab.conditions.flicker = 0.0;
            lab.conditions.latency_jitter = 0.0;
            lab.sigma_xy = Some(0.0);
            lab.sigma_theta = Some(0.0);
            lab.start_jitter = [0.0; 3];
        }
        cfg.other_lab.conditions = cfg.home_lab.conditions;
        cfg
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        let runs = [
            self.same_robot_runs,
            self.inter_robot_robots * self.inter_robot_runs,
            2 * self.cross_lab_runs_per_lab,
        ];
        if runs.iter().any(|&n| n < 2) {
            return Err(StudyError::Config("every study needs at least two runs".into()));
        }
        if !(self.bin_width > 0.0) {
            return Err(StudyError::Config("bin width must be positive".into()));
        }
        self.home_lab.validate().map_err(|e| StudyError::Config(e.to_string()))?;
        self.other_lab.validate().map_err(|e| StudyError::Config(e.to_string()))
    }

    /// Every run of the selected studies, in a fixed order.
    pub fn plan(&self, kinds: &[StudyKind]) -> Vec<RunPlan> {
        let mut plan = Vec::new();
        let m = self.master_seed;
        let robot = |name: String| derive_seed(self.fleet_seed, &format!("robot/{name}"));
        let mut push = |kind: StudyKind, robot_seed: u64, lab: usize, run: usize| {
            plan.push(RunPlan {
                kind,
                index: run,
                hardware_seed: robot_seed,
                lab,
                seed: derive_seed(m, &format!("run/{kind}/{run}")),
            });
        };
        for &kind in kinds {
            match kind {
                StudyKind::SameRobot => {
                    let r = robot("home/0".into());
                    for i in 0..self.same_robot_runs {
                        push(kind, r, 0, i);
                    }
                }
                StudyKind::InterRobot => {
                    for k in 0..self.inter_robot_robots {
                        let r = robot(format!("home/{k}"));
                        for j in 0..self.inter_robot_runs {
                            push(kind, r, 0, k * self.inter_robot_runs + j);
                        }
                    }
                }
                StudyKind::CrossLab => {
                    for lab in 0..2 {
                        let r = robot(if lab == 0 { "home/0".into() } else { "other/0".into() });
                        for j in 0..self.cross_lab_runs_per_lab {
                            push(kind, r, lab, lab * self.cross_lab_runs_per_lab + j);
                        }
                    }
                }
            }
        }
        plan
    }

    fn lab(&self, k: usize) -> &LabProfile {
        if k == 0 {
            &self.home_lab
        } else {
            &self.other_lab
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunPlan {
    pub kind: StudyKind,
    pub index: usize,
    pub hardware_seed: u64,
    /// 0 for the home lab, 1 for the other lab.
    pub lab: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub plan: RunPlan,
    pub lab_id: String,
    pub params: RobotParams,
    pub termination: Option<TerminationReason>,
    pub series: LaneSeries,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyData {
    pub runs: Vec<RunRecord>,
}

impl StudyData {
    pub fn group(&self, kind: StudyKind) -> Vec<&RunRecord> {
        self.runs.iter().filter(|r| r.plan.kind == kind).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub table: StudyTable,
    pub data: StudyData,
}

/// Drives one planned run with the built-in baseline agent. The error is
/// the reason the run did not complete.
pub fn execute_run(cfg: &StudyConfig, map: &Arc<TileMap>, plan: &RunPlan) -> Result<RunRecord, String> {
    let lab = cfg.lab(plan.lab);
    let params = sample_hardware(&cfg.spec.hardware, plan.hardware_seed).map_err(|e| e.to_string())?;
    let setup = EpisodeSetup {
        index: plan.index as u32,
        seed: plan.seed,
        params,
        compliance: compliance_check(&params, &cfg.spec.compliance),
        start: lab.place(cfg.spec.active.pose(), plan.seed),
        passive: Vec::new(),
        conditions: lab.conditions,
        termination: cfg.spec.termination,
        control_rate: cfg.spec.control_rate,
        localization: lab.localization(&cfg.spec.localization),
    };
    let log = run_episode(&setup, map, &ResolvedAgent::Baseline, &Launcher::default());
    if log.status != EpisodeStatus::Completed {
        return Err(log.error.unwrap_or_else(|| format!("{:?}", log.status)));
    }
    let series = lane_series(&log.estimate, map).map_err(|e| e.to_string())?;
    Ok(RunRecord { plan: *plan, lab_id: lab.id.clone(), params, termination: log.termination, series })
}

/// Runs the selected studies with the built-in baseline agent, in parallel
/// when enabled. Lane offsets come from the localization estimate.
pub fn run_study(cfg: &StudyConfig, kinds: &[StudyKind]) -> Result<StudyResult, StudyError> {
    cfg.validate()?;
    let map = Arc::new(cfg.spec.load_map(None).map_err(|e| StudyError::Config(e.to_string()))?);
    let plan = cfg.plan(kinds);
    let outcomes = par::map_indexed(plan.len(), |i| execute_run(cfg, &map, &plan[i]));
    let mut data = StudyData::default();
    let mut failure = None;
    for (p, o) in plan.iter().zip(outcomes) {
        match o {
            Ok(r) => data.runs.push(r),
            Err(reason) if failure.is_none() => failure = Some((p.kind, p.index, reason)),
            Err(_) => {}
        }
    }
    if let Some((kind, run, reason)) = failure {
        return Err(StudyError::Run { group: kind.to_string(), run, reason, partial: Box::new(data) });
    }
    let mut groups: BTreeMap<StudyKind, Vec<LaneSeries>> = BTreeMap::new();
    for r in &data.runs {
        groups.entry(r.plan.kind).or_default().push(r.series.clone());
    }
    let named: Vec<(String, Vec<LaneSeries>)> = kinds
        .iter()
        .filter_map(|k| groups.remove(k).map(|g| (k.to_string(), g)))
        .collect();
    let table = study_table(&named, cfg.bin_width)?;
    Ok(StudyResult { table, data })
}
