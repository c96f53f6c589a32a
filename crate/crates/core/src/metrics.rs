//! Lane-relative statistics of trajectories: MPD (mean position deviation)
//! and MOD (mean orientation deviation) along arc length, and the tables
//! comparing groups of runs.

use std::fmt::Write as _;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simworld::{normalize_angle, TileMap, TimedPose};

pub const DEFAULT_BIN_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("trajectory is empty or starts off the road")]
    Empty,
    #[error("no runs given")]
    NoRuns,
    #[error("bin width {0} must be positive")]
    BadBinWidth(f64),
    #[error("runs do not share any stretch of road")]
    NoOverlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneSample {
    pub s: f64,
    pub d: f64,
    pub phi: f64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LaneSeries {
    pub samples: Vec<LaneSample>,
}

impl LaneSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn s_range(&self) -> Option<(f64, f64)> {
        Some((self.samples.first()?.s, self.samples.last()?.s))
    }

    /// Value of `d` and `phi` at arc length `s` by linear interpolation.
    fn at(&self, s: f64) -> Option<(f64, f64)> {
        let (lo, hi) = self.s_range()?;
        if s < lo || s > hi {
            return None;
        }
        let k = self.samples.partition_point(|p| p.s < s);
        if k == 0 {
            let p = self.samples[0];
            return Some((p.d, p.phi));
        }
        let (a, b) = (self.samples[k - 1], self.samples[k]);
        let w = (s - a.s) / (b.s - a.s);
        Some((a.d + w * (b.d - a.d), a.phi + w * normalize_angle(b.phi - a.phi)))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|p| LaneSample { d: p.d * c, ..*p }).collect(),
        }
    }
}

/// Projects every pose onto the lane. Arc length starts at zero on the
/// first sample and is unwrapped across laps; it never decreases (a sample
/// that would move `s` backwards keeps the previous value). The series
/// stops at the first pose off the road.
pub fn lane_series(traj: &[TimedPose], map: &TileMap) -> Result<LaneSeries, MetricsError> {
    let mut samples: Vec<LaneSample> = Vec::with_capacity(traj.len());
    let mut prev_raw = 0.0;
    let mut unwrapped = 0.0;
    for p in traj {
        let Ok(proj) = map.project(&p.pose) else { break };
        let raw = proj.point.s;
        if samples.is_empty() {
            prev_raw = raw;
        } else {
            let cycle = proj.cycle_length;
            let mut ds = raw - prev_raw;
            if cycle > 0.0 {
                ds = (ds + cycle / 2.0).rem_euclid(cycle) - cycle / 2.0;
            }
            unwrapped += ds;
            prev_raw = raw;
        }
        let s = samples.last().map_or(0.0, |l| unwrapped.max(l.s));
        samples.push(LaneSample { s, d: proj.point.d, phi: proj.point.phi, t: p.t });
    }
    if samples.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(LaneSeries { samples })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub s: f64,
    pub runs: usize,
    pub d_mean: f64,
    pub d_std: Option<f64>,
    pub phi_mean: f64,
    pub phi_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedStats {
    pub bin_width: f64,
    pub bins: Vec<Bin>,
    /// Mean over bins of the per-bin mean lateral offset.
    pub mpd_mean: f64,
    /// Standard deviation over bins of the per-bin mean lateral offset.
    pub mpd_std: f64,
    pub mod_mean: f64,
    pub mod_std: f64,
    /// Mean over bins of the across-run standard deviation of `d`; zero
    /// when no bin has two runs.
    pub mpd_spread: f64,
    pub mod_spread: f64,
}

// Shifted by the first value so that identical inputs give exactly that value.
fn mean(v: &[f64]) -> f64 {
    let x0 = v[0];
    x0 + v.iter().map(|x| x - x0).sum::<f64>() / v.len() as f64
}

/// Sample (n − 1) standard deviation; `None` below two values.
pub fn sample_std(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

fn circular_mean(v: &[f64]) -> f64 {
    let a0 = v[0];
    let (s, c) = v.iter().fold((0.0, 0.0), |(s, c), a| (s + (a - a0).sin(), c + (a - a0).cos()));
    let m = a0 + s.atan2(c);
    if m > -PI && m <= PI {
        m
    } else {
        normalize_angle(m)
    }
}

fn circular_std(v: &[f64], m: f64) -> Option<f64> {
    let dev: Vec<f64> = v
        .iter()
        .map(|a| a - m)
        .map(|d| if d > -PI && d <= PI { d } else { normalize_angle(d) })
        .collect();
    if dev.len() < 2 {
        return None;
    }
    Some((dev.iter().map(|x| x * x).sum::<f64>() / (dev.len() - 1) as f64).sqrt())
}

/// Resamples every run at bin centres `bin_width` apart and aggregates
/// across runs. Bins span the union of the runs' arc-length ranges; a run
/// contributes to the bins inside its own range.
pub fn binned_stats(runs: &[LaneSeries], bin_width: f64) -> Result<BinnedStats, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::NoRuns);
    }
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(MetricsError::BadBinWidth(bin_width));
    }
    let ranges: Vec<(f64, f64)> = runs
        .iter()
        .map(|r| r.s_range().ok_or(MetricsError::Empty))
        .collect::<Result<_, _>>()?;
    let lo = ranges.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let hi = ranges.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let shared_lo = ranges.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let shared_hi = ranges.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    if shared_hi <= shared_lo {
        return Err(MetricsError::NoOverlap);
    }
    let n_bins = (((hi - lo) / bin_width).floor() as usize).max(1);
    let mut bins = Vec::with_capacity(n_bins);
    for k in 0..n_bins {
        let s = lo + (k as f64 + 0.5) * bin_width;
        let s = s.min(hi);
        let vals: Vec<(f64, f64)> = runs.iter().filter_map(|r| r.at(s)).collect();
        if vals.is_empty() {
            continue;
        }
        let ds: Vec<f64> = vals.iter().map(|v| v.0).collect();
        let ps: Vec<f64> = vals.iter().map(|v| v.1).collect();
        let pm = circular_mean(&ps);
        bins.push(Bin {
            s,
            runs: vals.len(),
            d_mean: mean(&ds),
            d_std: sample_std(&ds),
            phi_mean: pm,
            phi_std: circular_std(&ps, pm),
        });
    }
    let d_means: Vec<f64> = bins.iter().map(|b| b.d_mean).collect();
    let p_means: Vec<f64> = bins.iter().map(|b| b.phi_mean).collect();
    let d_stds: Vec<f64> = bins.iter().filter_map(|b| b.d_std).collect();
    let p_stds: Vec<f64> = bins.iter().filter_map(|b| b.phi_std).collect();
    let spread = |v: &[f64]| if v.is_empty() { 0.0 } else { mean(v) };
    Ok(BinnedStats {
        bin_width,
        mpd_mean: mean(&d_means),
        mpd_std: sample_std(&d_means).unwrap_or(0.0),
        mod_mean: mean(&p_means),
        mod_std: sample_std(&p_means).unwrap_or(0.0),
        mpd_spread: spread(&d_stds),
        mod_spread: spread(&p_stds),
        bins,
    })
}

/// Published reference values (cm, deg) for the three repeatability
/// groups, shown beside recomputed rows; never recomputed.
pub const REFERENCE_ROWS: [(&str, f64, f64); 3] = [
    ("same_robot", 1.3, 2.8),
    ("inter_robot", 3.4, 5.2),
    ("cross_lab", 2.5, 3.9),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub group: String,
    /// Across-run spread of the lateral offset, averaged along the lane, cm.
    pub mpd_std_cm: f64,
    /// Same for the heading error, degrees.
    pub mod_std_deg: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    pub fn row(&self, group: &str) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.group == group)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.group.len()).max().unwrap_or(5).max(5);
        let mut out = format!(
            "{:<width$}  {:>4}  {:>11}  {:>12}  {:>16}\n",
            "group", "runs", "MPD std cm", "MOD std deg", "reference cm/deg"
        );
        for r in &self.rows {
            let reference = REFERENCE_ROWS
                .iter()
                .find(|x| x.0 == r.group)
                .map_or("-".to_string(), |x| format!("{:.1} / {:.1}", x.1, x.2));
            let _ = writeln!(
                out,
                "{:<width$}  {:>4}  {:>11.3}  {:>12.3}  {:>16}",
                r.group, r.runs, r.mpd_std_cm, r.mod_std_deg, reference
            );
        }
        out
    }
}

/// One row per named group of runs. The row's spread figures are the mean
/// over bins of the across-run sample standard deviation.
pub fn study_table(groups: &[(String, Vec<LaneSeries>)], bin_width: f64) -> Result<StudyTable, MetricsError> {
    let rows = groups
        .iter()
        .map(|(name, runs)| {
            let stats = binned_stats(runs, bin_width)?;
            Ok(StudyRow {
                group: name.clone(),
                mpd_std_cm: stats.mpd_spread * 100.0,
                mod_std_deg: stats.mod_spread.to_degrees(),
                runs: runs.len(),
            })
        })
        .collect::<Result<_, MetricsError>>()?;
    Ok(StudyTable { rows })
}
