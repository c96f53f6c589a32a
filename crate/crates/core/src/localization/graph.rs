use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::detect::Detection;
use super::LocError;
use crate::simworld::Pose2;

/// A variable pose: one target at one keyframe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeKey {
    pub target: u32,
    pub keyframe: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    Anchor(u32),
    Var(usize),
}

/// Relative-pose constraint: `z` is `b` seen from `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: NodeRef,
    pub b: NodeRef,
    pub z: Pose2,
    pub info: [[f64; 3]; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessPrior {
    pub info: [[f64; 3]; 3],
}

impl SmoothnessPrior {
    pub fn from_sigmas(sigma_xy: f64, sigma_theta: f64) -> Self {
        let a = 1.0 / (sigma_xy * sigma_xy);
        let b = 1.0 / (sigma_theta * sigma_theta);
        Self {
            info: [[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, b]],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph {
    pub keyframe_dt: f64,
    pub nodes: Vec<NodeKey>,
    pub initial: Vec<Pose2>,
    pub anchors: BTreeMap<u32, Pose2>,
    pub edges: Vec<Edge>,
}

impl PoseGraph {
    pub fn new(anchors: BTreeMap<u32, Pose2>, keyframe_dt: f64) -> Self {
        Self {
            keyframe_dt,
            nodes: Vec::new(),
            initial: Vec::new(),
            anchors,
            edges: Vec::new(),
        }
    }

    pub fn add_node(&mut self, key: NodeKey, init: Pose2) -> usize {
        self.nodes.push(key);
        self.initial.push(init);
        self.nodes.len() - 1
    }

    pub fn add_edge(&mut self, a: NodeRef, b: NodeRef, z: Pose2, info: [[f64; 3]; 3]) {
        self.edges.push(Edge { a, b, z, info });
    }

    pub fn node_time(&self, i: usize) -> f64 {
        self.nodes[i].keyframe as f64 * self.keyframe_dt
    }

    pub fn variable_count(&self) -> usize {
        self.nodes.len()
    }

    /// Edges joining two keyframes of the same target.
    pub fn smoothness_edge_count(&self) -> usize {
        self.edges
            .iter()
            .filter(|e| matches!((e.a, e.b), (NodeRef::Var(a), NodeRef::Var(b)) if self.nodes[a].target == self.nodes[b].target))
            .count()
    }

    /// Variable nodes with no path to an anchor.
    pub fn unreachable(&self) -> Vec<NodeKey> {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        for e in &self.edges {
            match (e.a, e.b) {
                (NodeRef::Var(a), NodeRef::Var(b)) => {
                    adj[a].push(b);
                    adj[b].push(a);
                }
                (NodeRef::Anchor(id), NodeRef::Var(v)) | (NodeRef::Var(v), NodeRef::Anchor(id)) => {
                    if self.anchors.contains_key(&id) && !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
                _ => {}
            }
        }
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        (0..n).filter(|&i| !seen[i]).map(|i| self.nodes[i]).collect()
    }

    pub fn check(&self) -> Result<(), LocError> {
        let bad = self.unreachable();
        if !bad.is_empty() {
            return Err(LocError::UnderConstrained(bad));
        }
        for e in &self.edges {
            for r in [e.a, e.b] {
                if let NodeRef::Anchor(id) = r {
                    if !self.anchors.contains_key(&id) {
                        return Err(LocError::InvalidConfig(format!("edge refers to unknown anchor {id}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Initial guesses by walking edges out from the anchors.
    fn initialize(&mut self) {
        let mut known: Vec<Option<Pose2>> = vec![None; self.nodes.len()];
        let pose_of = |r: NodeRef, known: &[Option<Pose2>]| match r {
            NodeRef::Anchor(id) => self.anchors.get(&id).copied(),
            NodeRef::Var(i) => known[i],
        };
        loop {
            let mut progress = false;
            for e in &self.edges {
                match (pose_of(e.a, &known), pose_of(e.b, &known)) {
                    (Some(a), None) => {
                        if let NodeRef::Var(b) = e.b {
                            known[b] = Some(a.compose(&e.z));
                            progress = true;
                        }
                    }
                    (None, Some(b)) => {
                        if let NodeRef::Var(a) = e.a {
                            known[a] = Some(b.compose(&e.z.inverse()));
                            progress = true;
                        }
                    }
                    _ => {}
                }
            }
            if !progress {
                break;
            }
        }
        for (init, k) in self.initial.iter_mut().zip(known) {
            if let Some(p) = k {
                *init = p;
            }
        }
    }
}

fn keyframe_of(t: f64, dt: f64) -> i64 {
    (t / dt + 1e-9).floor() as i64
}

/// Turns detections into a pose graph. Each detection lands on keyframe
/// `floor(t / keyframe_dt)`; an observer that is not an anchor is itself a
/// variable node at that keyframe. Consecutive keyframes of a target are
/// tied by `prior`, weakened in proportion to the gap between them.
pub fn build_graph(
    dets: &[Detection],
    anchors: &BTreeMap<u32, Pose2>,
    keyframe_dt: f64,
    prior: SmoothnessPrior,
) -> Result<PoseGraph, LocError> {
    if !(keyframe_dt > 0.0 && keyframe_dt.is_finite()) {
        return Err(LocError::InvalidConfig(format!("keyframe_dt {keyframe_dt} must be positive")));
    }
    let mut keys = BTreeSet::new();
    for d in dets {
        let k = keyframe_of(d.t, keyframe_dt);
        keys.insert(NodeKey { target: d.target_id, keyframe: k });
        if !anchors.contains_key(&d.observer_id) {
            keys.insert(NodeKey { target: d.observer_id, keyframe: k });
        }
    }
    let mut graph = PoseGraph::new(anchors.clone(), keyframe_dt);
    let mut index = BTreeMap::new();
    for key in keys {
        index.insert(key, graph.add_node(key, Pose2::identity()));
    }
    for d in dets {
        let k = keyframe_of(d.t, keyframe_dt);
        let b = NodeRef::Var(index[&NodeKey { target: d.target_id, keyframe: k }]);
        let a = if anchors.contains_key(&d.observer_id) {
            NodeRef::Anchor(d.observer_id)
        } else {
            NodeRef::Var(index[&NodeKey { target: d.observer_id, keyframe: k }])
        };
        graph.add_edge(a, b, d.z, d.info);
    }
    let ordered: Vec<(NodeKey, usize)> = index.iter().map(|(k, v)| (*k, *v)).collect();
    for pair in ordered.windows(2) {
        let ((ka, ia), (kb, ib)) = (pair[0], pair[1]);
        if ka.target == kb.target {
            let gap = (kb.keyframe - ka.keyframe) as f64;
            let mut info = prior.info;
            for row in &mut info {
                for v in row {
                    *v /= gap;
                }
            }
            graph.add_edge(NodeRef::Var(ia), NodeRef::Var(ib), Pose2::identity(), info);
        }
    }
    graph.check()?;
    graph.initialize();
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localization::DetectionNoise;

    fn det(observer: u32, target: u32, t: f64) -> Detection {
        Detection {
            observer_id: observer,
            target_id: target,
            t,
            z: Pose2::new(0.1, 0.0, 0.0),
            info: DetectionNoise { sigma_xy: 0.01, sigma_theta: 0.01 }.info(),
        }
    }

    fn anchors() -> BTreeMap<u32, Pose2> {
        [(100, Pose2::identity()), (101, Pose2::new(1.0, 0.0, 0.0))].into_iter().collect()
    }

    fn prior() -> SmoothnessPrior {
        SmoothnessPrior::from_sigmas(0.05, 0.2)
    }

    #[test]
    fn one_detection_one_node() {
        let g = build_graph(&[det(100, 1, 0.0)], &anchors(), 0.1, prior()).unwrap();
        assert_eq!((g.variable_count(), g.edges.len()), (1, 1));
        assert_eq!(g.initial[0], Pose2::new(0.1, 0.0, 0.0));
    }

    #[test]
    fn nearby_detections_share_a_keyframe() {
        let g = build_graph(&[det(100, 1, 0.04), det(101, 1, 0.06)], &anchors(), 0.1, prior()).unwrap();
        assert_eq!(g.variable_count(), 1);
        assert_eq!(g.edges.len(), 2);
        assert_eq!(g.nodes[0].keyframe, 0);
    }

    #[test]
    fn two_targets_ten_keyframes() {
        let dets: Vec<Detection> = (0..10)
            .flat_map(|k| [det(100, 1, k as f64 * 0.1), det(101, 2, k as f64 * 0.1)])
            .collect();
        let g = build_graph(&dets, &anchors(), 0.1, prior()).unwrap();
        assert_eq!(g.variable_count(), 20);
        assert_eq!(g.smoothness_edge_count(), 18);
    }

    #[test]
    fn robots_seeing_only_each_other_are_under_constrained() {
        let err = build_graph(&[det(5, 6, 0.0)], &anchors(), 0.1, prior()).unwrap_err();
        match err {
            LocError::UnderConstrained(nodes) => assert_eq!(nodes.len(), 2),
            e => panic!("{e}"),
        }
    }
}
