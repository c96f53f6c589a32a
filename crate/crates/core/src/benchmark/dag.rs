use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::score::{compare, ScoreVector, ScoringEntry, Verdict};
use super::BenchmarkError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cmp {
    Ge,
    Le,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Condition {
    Threshold { metric: String, cmp: Cmp, value: f64 },
    BeatsBaseline { baseline: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DagEdge {
    pub from: String,
    pub to: String,
    pub condition: Condition,
}

/// Reference scores on one benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baseline {
    pub benchmark: String,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkDag {
    pub id: String,
    pub nodes: Vec<String>,
    #[serde(default)]
    pub edges: Vec<DagEdge>,
    #[serde(default)]
    pub baselines: BTreeMap<String, Baseline>,
}

impl BenchmarkDag {
    pub fn single(benchmark: &str) -> Self {
        Self {
            id: benchmark.to_string(),
            nodes: vec![benchmark.to_string()],
            edges: Vec::new(),
            baselines: BTreeMap::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, BenchmarkError> {
        let dag: Self = toml::from_str(text).map_err(|e| BenchmarkError::Parse(e.to_string()))?;
        dag.validate()?;
        Ok(dag)
    }

    pub fn roots(&self) -> Vec<String> {
        let targets: BTreeSet<&str> = self.edges.iter().map(|e| e.to.as_str()).collect();
        self.nodes.iter().filter(|n| !targets.contains(n.as_str())).cloned().collect()
    }

    /// Checks node uniqueness, edge endpoints, baseline references and
    /// acyclicity; reports every problem found.
    pub fn validate(&self) -> Result<(), BenchmarkError> {
        let mut issues = Vec::new();
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(n.as_str()) {
                issues.push(format!("node {n:?} listed twice"));
            }
        }
        if self.nodes.is_empty() {
            issues.push("dag has no nodes".to_string());
        }
        for (i, e) in self.edges.iter().enumerate() {
            for end in [&e.from, &e.to] {
                if !seen.contains(end.as_str()) {
                    issues.push(format!("edge {i} refers to unknown node {end:?}"));
                }
            }
            match &e.condition {
                Condition::BeatsBaseline { baseline } => match self.baselines.get(baseline) {
                    None => issues.push(format!("edge {i} refers to unknown baseline {baseline:?}")),
                    Some(b) if b.benchmark != e.from => issues.push(format!(
                        "edge {i}: baseline {baseline:?} is for {:?}, not {:?}",
                        b.benchmark, e.from
                    )),
                    _ => {}
                },
                Condition::Threshold { metric, value, .. } => {
                    if !value.is_finite() {
                        issues.push(format!("edge {i}: threshold on {metric:?} is not finite"));
                    }
                }
            }
        }
        if issues.is_empty() && self.has_cycle() {
            issues.push("dag contains a cycle".to_string());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(BenchmarkError::Invalid(issues))
        }
    }

    fn has_cycle(&self) -> bool {
        let mut indegree: BTreeMap<&str, usize> = self.nodes.iter().map(|n| (n.as_str(), 0)).collect();
        for e in &self.edges {
            *indegree.entry(e.to.as_str()).or_default() += 1;
        }
        let mut ready: Vec<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
        let mut visited = 0;
        while let Some(n) = ready.pop() {
            visited += 1;
            for e in self.edges.iter().filter(|e| e.from == n) {
                let d = indegree.get_mut(e.to.as_str()).expect("validated endpoint");
                *d -= 1;
                if *d == 0 {
                    ready.push(e.to.as_str());
                }
            }
        }
        visited != indegree.len()
    }

    /// Baseline score vectors, aligned with the scoring of the benchmark
    /// each baseline belongs to.
    pub fn baseline_scores(
        &self,
        scoring: &BTreeMap<String, Vec<ScoringEntry>>,
    ) -> Result<BTreeMap<String, ScoreVector>, BenchmarkError> {
        self.baselines
            .iter()
            .map(|(name, b)| {
                let s = scoring
                    .get(&b.benchmark)
                    .ok_or_else(|| BenchmarkError::UnknownBenchmark(b.benchmark.clone()))?;
                Ok((name.clone(), ScoreVector::from_metrics(&b.scores, s)?))
            })
            .collect()
    }
}

/// Benchmarks open to a submission given its valid results so far. Roots
/// are always open; any other node opens as soon as one incoming edge has a
/// source result meeting the edge condition.
pub fn next_stages(
    dag: &BenchmarkDag,
    scoring: &BTreeMap<String, Vec<ScoringEntry>>,
    completed: &BTreeMap<String, ScoreVector>,
    baselines: &BTreeMap<String, ScoreVector>,
) -> Result<BTreeSet<String>, BenchmarkError> {
    let mut open: BTreeSet<String> = dag.roots().into_iter().collect();
    for e in &dag.edges {
        let Some(result) = completed.get(&e.from) else { continue };
        let fires = match &e.condition {
            Condition::Threshold { metric, cmp, value } => {
                let v = result.get(metric).ok_or_else(|| BenchmarkError::MissingMetric(metric.clone()))?;
                match cmp {
                    Cmp::Ge => v >= *value,
                    Cmp::Le => v <= *value,
                }
            }
            Condition::BeatsBaseline { baseline } => {
                let b = baselines
                    .get(baseline)
                    .ok_or_else(|| BenchmarkError::UnknownBaseline(baseline.clone()))?;
                let s = scoring
                    .get(&e.from)
                    .ok_or_else(|| BenchmarkError::UnknownBenchmark(e.from.clone()))?;
                compare(result, b, s)? == Verdict::ABetter
            }
        };
        if fires {
            open.insert(e.to.clone());
        }
    }
    Ok(open)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::Direction;
    use proptest::prelude::*;

    const TWO_STAGE: &str = r#"
id = "lf-progression"
nodes = ["lf-sim", "lf-lab"]

[[edges]]
from = "lf-sim"
to = "lf-lab"
condition = { kind = "threshold", metric = "survival_time", cmp = "ge", value = 30.0 }

[baselines.reference]
benchmark = "lf-sim"
scores = { survival_time = 60.0, mpd_abs = 0.02 }
"#;

    fn scoring() -> BTreeMap<String, Vec<ScoringEntry>> {
        let s = vec![
            ScoringEntry::new("survival_time", Direction::HigherBetter, 0.5),
            ScoringEntry::new("mpd_abs", Direction::LowerBetter, 0.001),
        ];
        [("lf-sim".to_string(), s.clone()), ("lf-lab".to_string(), s)].into_iter().collect()
    }

    fn result(t: f64, mpd: f64) -> ScoreVector {
        ScoreVector::aligned(&[t, mpd], &scoring()["lf-sim"])
    }

    #[test]
    fn threshold_unlocks_the_lab_stage() {
        let dag = BenchmarkDag::from_toml(TWO_STAGE).unwrap();
        assert_eq!(dag.roots(), vec!["lf-sim".to_string()]);
        let none = next_stages(&dag, &scoring(), &BTreeMap::new(), &BTreeMap::new()).unwrap();
        assert_eq!(none.len(), 1);
        let done: BTreeMap<_, _> = [("lf-sim".to_string(), result(35.0, 0.05))].into_iter().collect();
        let open = next_stages(&dag, &scoring(), &done, &BTreeMap::new()).unwrap();
        assert!(open.contains("lf-lab"));
        let short: BTreeMap<_, _> = [("lf-sim".to_string(), result(20.0, 0.05))].into_iter().collect();
        assert!(!next_stages(&dag, &scoring(), &short, &BTreeMap::new()).unwrap().contains("lf-lab"));
    }

    #[test]
    fn losing_to_the_baseline_keeps_the_stage_locked() {
        let mut dag = BenchmarkDag::from_toml(TWO_STAGE).unwrap();
        dag.edges[0].condition = Condition::BeatsBaseline { baseline: "reference".into() };
        dag.validate().unwrap();
        let base = dag.baseline_scores(&scoring()).unwrap();
        let worse: BTreeMap<_, _> = [("lf-sim".to_string(), result(60.0, 0.05))].into_iter().collect();
        assert!(!next_stages(&dag, &scoring(), &worse, &base).unwrap().contains("lf-lab"));
        let better: BTreeMap<_, _> = [("lf-sim".to_string(), result(60.0, 0.01))].into_iter().collect();
        assert!(next_stages(&dag, &scoring(), &better, &base).unwrap().contains("lf-lab"));
        assert!(matches!(
            next_stages(&dag, &scoring(), &better, &BTreeMap::new()),
            Err(BenchmarkError::UnknownBaseline(_))
        ));
    }

    #[test]
    fn cycles_are_rejected() {
        let text = r#"
id = "loop"
nodes = ["a", "b"]
[[edges]]
from = "a"
to = "b"
condition = { kind = "threshold", metric = "x", cmp = "ge", value = 1.0 }
[[edges]]
from = "b"
to = "a"
condition = { kind = "threshold", metric = "x", cmp = "ge", value = 1.0 }
"#;
        match BenchmarkDag::from_toml(text) {
            Err(BenchmarkError::Invalid(issues)) => assert!(issues.iter().any(|i| i.contains("cycle"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_references_are_all_reported() {
        let mut dag = BenchmarkDag::from_toml(TWO_STAGE).unwrap();
        dag.edges.push(DagEdge {
            from: "nowhere".into(),
            to: "lf-lab".into(),
            condition: Condition::BeatsBaseline { baseline: "ghost".into() },
        });
        dag.nodes.push("lf-sim".into());
        match dag.validate() {
            Err(BenchmarkError::Invalid(issues)) => assert_eq!(issues.len(), 3, "{issues:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_roots() {
        let dag = BenchmarkDag {
            id: "d".into(),
            nodes: vec!["a".into(), "b".into(), "c".into()],
            edges: vec![DagEdge {
                from: "a".into(),
                to: "c".into(),
                condition: Condition::Threshold { metric: "x".into(), cmp: Cmp::Le, value: 1.0 },
            }],
            baselines: BTreeMap::new(),
        };
        dag.validate().unwrap();
        assert_eq!(dag.roots(), vec!["a".to_string(), "b".to_string()]);
    }

    proptest! {
        #[test]
        fn more_results_never_lock_a_stage(
            edges in proptest::collection::vec((0usize..5, 0usize..5, 0.0..60.0f64), 0..8),
            results in proptest::collection::vec(proptest::option::of(0.0..60.0f64), 5),
            extra in 0usize..5,
            extra_val in 0.0..60.0f64,
        ) {
            let names: Vec<String> = (0..5).map(|i| format!("n{i}")).collect();
            let dag = BenchmarkDag {
                id: "p".into(),
                nodes: names.clone(),
                edges: edges
                    .iter()
                    .filter(|(a, b, _)| a < b)
                    .map(|(a, b, v)| DagEdge {
                        from: names[*a].clone(),
                        to: names[*b].clone(),
                        condition: Condition::Threshold { metric: "survival_time".into(), cmp: Cmp::Ge, value: *v },
                    })
                    .collect(),
                baselines: BTreeMap::new(),
            };
            dag.validate().unwrap();
            let sc: BTreeMap<String, Vec<ScoringEntry>> =
                names.iter().map(|n| (n.clone(), scoring()["lf-sim"].clone())).collect();
            let mut done: BTreeMap<String, ScoreVector> = results
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r.map(|t| (names[i].clone(), result(t, 0.0))))
                .collect();
            let before = next_stages(&dag, &sc, &done, &BTreeMap::new()).unwrap();
            if !done.contains_key(&names[extra]) {
                done.insert(names[extra].clone(), result(extra_val, 0.0));
            }
            let after = next_stages(&dag, &sc, &done, &BTreeMap::new()).unwrap();
            prop_assert!(before.is_subset(&after));
        }
    }
}
