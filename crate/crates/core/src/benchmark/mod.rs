//! Benchmark documents, lexicographic scoring with tolerances, and the
//! progression graph between benchmarks.

mod dag;
mod score;
mod spec;

use thiserror::Error;

pub use dag::{next_stages, Baseline, BenchmarkDag, Cmp, Condition, DagEdge};
pub use score::{
    compare, compare_values, lexicographic, rank, Direction, RankGroup, RankedEntry, ScoreVector, ScoringEntry,
    Verdict,
};
pub use spec::{
    validate_spec, BenchmarkSpec, EnvironmentBands, SeedPolicy, StartPose, BUILTIN_MAP, PRODUCED_METRICS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchmarkError {
    #[error("cannot parse document: {0}")]
    Parse(String),
    #[error("invalid document: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("score vector has {got} values, scoring lists {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("metric {0:?} missing from scores")]
    MissingMetric(String),
    #[error("metric {0:?} is not finite")]
    NonFinite(String),
    #[error("unknown baseline {0:?}")]
    UnknownBaseline(String),
    #[error("unknown benchmark {0:?}")]
    UnknownBenchmark(String),
    #[error("cannot load map: {0}")]
    Map(String),
}
