use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::BenchmarkError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringEntry {
    pub metric: String,
    pub direction: Direction,
    #[serde(default)]
    pub tolerance: f64,
}

impl ScoringEntry {
    pub fn new(metric: &str, direction: Direction, tolerance: f64) -> Self {
        Self { metric: metric.to_string(), direction, tolerance }
    }
}

/// Scores in scoring order, each tagged with its metric name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreVector {
    pub values: Vec<(String, f64)>,
}

impl ScoreVector {
    /// Picks the scored metrics out of `metrics`, in scoring order.
    pub fn from_metrics(metrics: &BTreeMap<String, f64>, scoring: &[ScoringEntry]) -> Result<Self, BenchmarkError> {
        let values = scoring
            .iter()
            .map(|e| {
                let v = *metrics
                    .get(&e.metric)
                    .ok_or_else(|| BenchmarkError::MissingMetric(e.metric.clone()))?;
                if !v.is_finite() {
                    return Err(BenchmarkError::NonFinite(e.metric.clone()));
                }
                Ok((e.metric.clone(), v))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { values })
    }

    /// Untagged vector for tests and tools; names come from `scoring`.
    pub fn aligned(values: &[f64], scoring: &[ScoringEntry]) -> Self {
        Self {
            values: scoring.iter().zip(values).map(|(e, &v)| (e.metric.clone(), v)).collect(),
        }
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.values.iter().find(|(m, _)| m == metric).map(|(_, v)| *v)
    }

    pub fn raw(&self) -> Vec<f64> {
        self.values.iter().map(|(_, v)| *v).collect()
    }

    pub fn check(&self, scoring: &[ScoringEntry]) -> Result<(), BenchmarkError> {
        if self.values.len() != scoring.len() {
            return Err(BenchmarkError::LengthMismatch { expected: scoring.len(), got: self.values.len() });
        }
        for ((name, v), e) in self.values.iter().zip(scoring) {
            if *name != e.metric {
                return Err(BenchmarkError::MissingMetric(e.metric.clone()));
            }
            if !v.is_finite() {
                return Err(BenchmarkError::NonFinite(name.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ABetter,
    BBetter,
    Tied,
}

impl Verdict {
    pub fn mirror(self) -> Self {
        match self {
            Verdict::ABetter => Verdict::BBetter,
            Verdict::BBetter => Verdict::ABetter,
            Verdict::Tied => Verdict::Tied,
        }
    }
}

/// Lexicographic comparison with per-metric tolerances: the first metric
/// whose values differ by more than its tolerance decides.
pub fn compare_values(a: &[f64], b: &[f64], scoring: &[ScoringEntry]) -> Result<Verdict, BenchmarkError> {
    for v in [a, b] {
        if v.len() != scoring.len() {
            return Err(BenchmarkError::LengthMismatch { expected: scoring.len(), got: v.len() });
        }
    }
    for ((x, y), e) in a.iter().zip(b).zip(scoring) {
        if (x - y).abs() <= e.tolerance {
            continue;
        }
        let a_higher = x > y;
        return Ok(match (e.direction, a_higher) {
            (Direction::HigherBetter, true) | (Direction::LowerBetter, false) => Verdict::ABetter,
            _ => Verdict::BBetter,
        });
    }
    Ok(Verdict::Tied)
}

pub fn compare(a: &ScoreVector, b: &ScoreVector, scoring: &[ScoringEntry]) -> Result<Verdict, BenchmarkError> {
    a.check(scoring)?;
    b.check(scoring)?;
    compare_values(&a.raw(), &b.raw(), scoring)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: String,
    pub wins: usize,
    pub scores: ScoreVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankGroup {
    /// 1-based position of the group.
    pub rank: usize,
    pub entries: Vec<RankedEntry>,
}

/// Orders entries by the number of others they beat, then by id. Entries
/// joined by a chain of ties share a group; a group also absorbs every
/// entry ordered between its members, so groups stay contiguous.
pub fn rank(entries: &[(String, ScoreVector)], scoring: &[ScoringEntry]) -> Result<Vec<RankGroup>, BenchmarkError> {
    for (_, s) in entries {
        s.check(scoring)?;
    }
    let raw: Vec<Vec<f64>> = entries.iter().map(|(_, s)| s.raw()).collect();
    let n = entries.len();
    let mut verdict = vec![vec![Verdict::Tied; n]; n];
    let mut wins = vec![0usize; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = compare_values(&raw[i], &raw[j], scoring)?;
            verdict[i][j] = v;
            verdict[j][i] = v.mirror();
            match v {
                Verdict::ABetter => wins[i] += 1,
                Verdict::BBetter => wins[j] += 1,
                Verdict::Tied => {}
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| wins[j].cmp(&wins[i]).then_with(|| entries[i].0.cmp(&entries[j].0)).then(i.cmp(&j)));
    let mut pos = vec![0usize; n];
    for (p, &i) in order.iter().enumerate() {
        pos[i] = p;
    }
    // furthest position each entry is tied with, then interval merging
    let mut reach: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && verdict[i][j] == Verdict::Tied {
                let (lo, hi) = (pos[i].min(pos[j]), pos[i].max(pos[j]));
                reach[lo] = reach[lo].max(hi);
            }
        }
    }
    let mut groups = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = reach[start];
        let mut k = start;
        while k <= end {
            end = end.max(reach[k]);
            k += 1;
        }
        groups.push(RankGroup {
            rank: groups.len() + 1,
            entries: order[start..=end]
                .iter()
                .map(|&i| RankedEntry { id: entries[i].0.clone(), wins: wins[i], scores: entries[i].1.clone() })
                .collect(),
        });
        start = end + 1;
    }
    Ok(groups)
}

/// Plain lexicographic ordering of two vectors under `scoring` directions,
/// ignoring tolerances.
pub fn lexicographic(a: &[f64], b: &[f64], scoring: &[ScoringEntry]) -> Ordering {
    for ((x, y), e) in a.iter().zip(b).zip(scoring) {
        let o = match e.direction {
            Direction::HigherBetter => y.total_cmp(x),
            Direction::LowerBetter => x.total_cmp(y),
        };
        if o != Ordering::Equal {
            return o;
        }
    }
    Ordering::Equal
}
