use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::{NodeKey, NodeRef, PoseGraph};
use super::skyline::Skyline;
use super::LocError;
use crate::simworld::{interpolate, normalize_angle, Pose2, TimedPose, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub lambda0: f64,
    /// Stop once an accepted step lowers chi² by less than this fraction.
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            lambda0: 1e-4,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub initial_chi2: f64,
    pub final_chi2: f64,
    pub converged: bool,
    /// chi² after each accepted step.
    pub chi2_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub nodes: Vec<NodeKey>,
    pub poses: Vec<Pose2>,
    /// Keyframe estimates per target, ordered by time.
    pub trajectories: BTreeMap<u32, Trajectory>,
}

impl Solution {
    fn new(graph: &PoseGraph, poses: Vec<Pose2>) -> Self {
        let mut trajectories: BTreeMap<u32, Trajectory> = BTreeMap::new();
        for (i, key) in graph.nodes.iter().enumerate() {
            trajectories.entry(key.target).or_default().push(TimedPose {
                t: graph.node_time(i),
                pose: poses[i],
            });
        }
        for traj in trajectories.values_mut() {
            traj.sort_by(|a, b| a.t.total_cmp(&b.t));
        }
        Self {
            nodes: graph.nodes.clone(),
            poses,
            trajectories,
        }
    }
}

/// Residual of one edge and its Jacobians with respect to the `(x, y, θ)`
/// of each endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeLinearization {
    pub e: [f64; 3],
    pub ja: [[f64; 3]; 3],
    pub jb: [[f64; 3]; 3],
}

/// `e = [R_zᵀ(R_aᵀ(t_b − t_a) − t_z), θ_b − θ_a − θ_z]`, the angle wrapped.
pub fn edge_residual(a: &Pose2, b: &Pose2, z: &Pose2) -> [f64; 3] {
    let (sa, ca) = a.theta.sin_cos();
    let (sz, cz) = z.theta.sin_cos();
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let (lx, ly) = (ca * dx + sa * dy - z.x, -sa * dx + ca * dy - z.y);
    [
        cz * lx + sz * ly,
        -sz * lx + cz * ly,
        normalize_angle(b.theta - a.theta - z.theta),
    ]
}

pub fn linearize_edge(a: &Pose2, b: &Pose2, z: &Pose2) -> EdgeLinearization {
    let (sa, ca) = a.theta.sin_cos();
    let (sz, cz) = z.theta.sin_cos();
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    // M = R_zᵀ R_aᵀ, rotation by -(θ_a + θ_z)
    let (sm, cm) = (a.theta + z.theta).sin_cos();
    let m = [[cm, sm], [-sm, cm]];
    // d(R_aᵀ)/dθ_a · Δt, then rotated by R_zᵀ
    let (gx, gy) = (-sa * dx + ca * dy, -ca * dx - sa * dy);
    let dth = [cz * gx + sz * gy, -sz * gx + cz * gy];
    let ja = [
        [-m[0][0], -m[0][1], dth[0]],
        [-m[1][0], -m[1][1], dth[1]],
        [0.0, 0.0, -1.0],
    ];
    let jb = [[m[0][0], m[0][1], 0.0], [m[1][0], m[1][1], 0.0], [0.0, 0.0, 1.0]];
    EdgeLinearization {
        e: edge_residual(a, b, z),
        ja,
        jb,
    }
}

fn pose_of(graph: &PoseGraph, r: NodeRef, x: &[Pose2]) -> Pose2 {
    match r {
        NodeRef::Anchor(id) => graph.anchors[&id],
        NodeRef::Var(i) => x[i],
    }
}

fn quad(e: &[f64; 3], info: &[[f64; 3]; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += e[i] * info[i][j] * e[j];
        }
    }
    s
}

/// `Σ eᵀ Ω e` over all edges.
pub fn chi2(graph: &PoseGraph, x: &[Pose2]) -> f64 {
    graph
        .edges
        .iter()
        .map(|edge| {
            let e = edge_residual(&pose_of(graph, edge.a, x), &pose_of(graph, edge.b, x), &edge.z);
            quad(&e, &edge.info)
        })
        .sum()
}

impl PoseGraph {
    /// Residual and Jacobians of edge `k` at the estimate `x`.
    pub fn linearize(&self, k: usize, x: &[Pose2]) -> EdgeLinearization {
        let edge = &self.edges[k];
        linearize_edge(&pose_of(self, edge.a, x), &pose_of(self, edge.b, x), &edge.z)
    }

    pub fn residual(&self, k: usize, x: &[Pose2]) -> [f64; 3] {
        let edge = &self.edges[k];
        edge_residual(&pose_of(self, edge.a, x), &pose_of(self, edge.b, x), &edge.z)
    }

    pub fn chi2(&self, x: &[Pose2]) -> f64 {
        chi2(self, x)
    }

    fn envelope(&self) -> Vec<usize> {
        let n = 3 * self.nodes.len();
        let mut first: Vec<usize> = (0..n).map(|r| r - r % 3).collect();
        for e in &self.edges {
            if let (NodeRef::Var(a), NodeRef::Var(b)) = (e.a, e.b) {
                let lo = 3 * a.min(b);
                let hi = a.max(b);
                for r in 3 * hi..3 * hi + 3 {
                    first[r] = first[r].min(lo);
                }
            }
        }
        first
    }

    /// Variable nodes joined to node `i` through variable-variable edges.
    fn component(&self, i: usize) -> Vec<NodeKey> {
        let mut seen = vec![false; self.nodes.len()];
        seen[i] = true;
        let mut stack = vec![i];
        while let Some(v) = stack.pop() {
            for e in &self.edges {
                if let (NodeRef::Var(a), NodeRef::Var(b)) = (e.a, e.b) {
                    let other = if a == v { b } else if b == v { a } else { continue };
                    if !seen[other] {
                        seen[other] = true;
                        stack.push(other);
                    }
                }
            }
        }
        (0..self.nodes.len()).filter(|&k| seen[k]).map(|k| self.nodes[k]).collect()
    }
}

fn mat_t_info(j: &[[f64; 3]; 3], info: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = (0..3).map(|k| j[k][r] * info[k][c]).sum();
        }
    }
    out
}

fn build_normal(graph: &PoseGraph, x: &[Pose2], h: &mut Skyline, b: &mut [f64]) {
    h.clear();
    b.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..graph.edges.len() {
        let edge = &graph.edges[k];
        let lin = graph.linearize(k, x);
        let blocks: Vec<(usize, [[f64; 3]; 3])> = [(edge.a, lin.ja), (edge.b, lin.jb)]
            .into_iter()
            .filter_map(|(r, j)| match r {
                NodeRef::Var(i) => Some((i, j)),
                NodeRef::Anchor(_) => None,
            })
            .collect();
        for &(i, ji) in &blocks {
            let jt_o = mat_t_info(&ji, &edge.info);
            for r in 0..3 {
                b[3 * i + r] += (0..3).map(|c| jt_o[r][c] * lin.e[c]).sum::<f64>();
            }
            for &(j, jj) in &blocks {
                if j > i {
                    continue;
                }
                for r in 0..3 {
                    for c in 0..3 {
                        let v: f64 = (0..3).map(|k| jt_o[r][k] * jj[k][c]).sum();
                        // block (i, j) with i ≥ j; within a diagonal block keep the lower half
                        if i != j || r >= c {
                            h.add(3 * i + r, 3 * j + c, v);
                        }
                    }
                }
            }
        }
    }
}

/// Levenberg–Marquardt over all variable nodes; anchors stay fixed. Only
/// steps that do not raise chi² are accepted.
pub fn optimize(graph: &PoseGraph, cfg: &SolverConfig) -> Result<(Solution, SolveStats), LocError> {
    graph.check()?;
    let n = 3 * graph.nodes.len();
    let mut x = graph.initial.clone();
    let mut cost = chi2(graph, &x);
    let mut stats = SolveStats {
        iterations: 0,
        initial_chi2: cost,
        final_chi2: cost,
        converged: false,
        chi2_history: Vec::new(),
    };
    if n == 0 || cost <= f64::MIN_POSITIVE {
        stats.converged = true;
        return Ok((Solution::new(graph, x), stats));
    }
    let envelope = graph.envelope();
    let mut h = Skyline::new(envelope.clone());
    let mut damped = Skyline::new(envelope);
    let mut b = vec![0.0; n];
    let mut lambda = cfg.lambda0;
    let mut step = vec![0.0; n];

    'outer: for iter in 0..cfg.max_iters {
        stats.iterations = iter + 1;
        build_normal(graph, &x, &mut h, &mut b);
        if iter == 0 {
            damped.clone_from(&h);
            if let Err(row) = damped.factor_with_threshold(1e-12) {
                return Err(LocError::Singular(graph.component(row / 3)));
            }
        }
        loop {
            damped.clone_from(&h);
            for i in 0..n {
                let d = h.get(i, i);
                damped.add(i, i, lambda * d.max(1e-12));
            }
            if let Err(row) = damped.factor() {
                if lambda > 1e12 {
                    return Err(LocError::Singular(graph.component(row / 3)));
                }
                lambda *= 10.0;
                continue;
            }
            step.iter_mut().zip(&b).for_each(|(s, bi)| *s = -bi);
            damped.solve(&mut step);
            let candidate: Vec<Pose2> = x
                .iter()
                .enumerate()
                .map(|(i, p)| Pose2::new(p.x + step[3 * i], p.y + step[3 * i + 1], p.theta + step[3 * i + 2]))
                .collect();
            let new_cost = chi2(graph, &candidate);
            if new_cost <= cost {
                let rel = (cost - new_cost) / cost;
                x = candidate;
                cost = new_cost;
                stats.chi2_history.push(cost);
                lambda = (lambda / 10.0).max(1e-12);
                if rel < cfg.tol || cost <= f64::MIN_POSITIVE {
                    stats.converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                // no descent left at machine precision
                stats.converged = true;
                break 'outer;
            }
        }
    }
    stats.final_chi2 = cost;
    Ok((Solution::new(graph, x), stats))
}

/// Pose of `target` at each query time, interpolated between keyframes.
pub fn estimate_trajectory(solution: &Solution, target: u32, times: &[f64]) -> Result<Trajectory, LocError> {
    let kf = solution.trajectories.get(&target).ok_or(LocError::UnknownTarget(target))?;
    if kf.len() < 2 {
        return Err(LocError::TooFewKeyframes(target));
    }
    Ok(times.iter().map(|&t| TimedPose { t, pose: interpolate(kf, t) }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localization::{build_graph, Detection, DetectionNoise, SmoothnessPrior};

    fn full_info(s: f64) -> [[f64; 3]; 3] {
        DetectionNoise { sigma_xy: s, sigma_theta: s }.info()
    }

    fn anchors() -> BTreeMap<u32, Pose2> {
        [(100, Pose2::new(0.5, -0.2, 0.4))].into_iter().collect()
    }

    fn single(z: Pose2, init: Pose2) -> PoseGraph {
        let mut g = PoseGraph::new(anchors(), 0.1);
        g.add_node(NodeKey { target: 1, keyframe: 0 }, init);
        g.add_edge(NodeRef::Anchor(100), NodeRef::Var(0), z, full_info(0.01));
        g
    }

    #[test]
    fn single_edge_lands_on_anchor_times_z() {
        let z = Pose2::new(0.3, 0.1, -0.7);
        let (sol, stats) = optimize(&single(z, Pose2::new(3.0, -2.0, 2.5)), &SolverConfig::default()).unwrap();
        let expect = anchors()[&100].compose(&z);
        let got = sol.poses[0];
        assert!((got.x - expect.x).abs() < 1e-9 && (got.y - expect.y).abs() < 1e-9);
        assert!(normalize_angle(got.theta - expect.theta).abs() < 1e-9);
        assert!(stats.final_chi2 <= stats.initial_chi2);
    }

    #[test]
    fn two_disagreeing_edges_meet_in_the_middle() {
        let mut g = single(Pose2::new(0.1, 0.0, 0.0), Pose2::identity());
        g.add_edge(NodeRef::Anchor(100), NodeRef::Var(0), Pose2::new(0.12, 0.0, 0.0), full_info(0.01));
        let (sol, _) = optimize(&g, &SolverConfig::default()).unwrap();
        let expect = anchors()[&100].compose(&Pose2::new(0.11, 0.0, 0.0));
        assert!((sol.poses[0].x - expect.x).abs() < 1e-9);
        assert!((sol.poses[0].y - expect.y).abs() < 1e-9);
    }

    #[test]
    fn missing_heading_information_is_singular() {
        let mut info = full_info(0.01);
        info[2][2] = 0.0;
        let mut g = PoseGraph::new(anchors(), 0.1);
        g.add_node(NodeKey { target: 4, keyframe: 0 }, Pose2::identity());
        g.add_edge(NodeRef::Anchor(100), NodeRef::Var(0), Pose2::new(0.1, 0.0, 0.0), info);
        match optimize(&g, &SolverConfig::default()) {
            Err(LocError::Singular(nodes)) => assert_eq!(nodes, vec![NodeKey { target: 4, keyframe: 0 }]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn interpolates_between_keyframes() {
        let dets: Vec<Detection> = [(0.0, 0.0), (0.1, 0.1)]
            .iter()
            .map(|&(t, x)| Detection {
                observer_id: 100,
                target_id: 1,
                t,
                z: anchors()[&100].between(&Pose2::new(x, 0.0, 0.0)),
                info: full_info(1e-4),
            })
            .collect();
        let g = build_graph(&dets, &anchors(), 0.1, SmoothnessPrior::from_sigmas(1e3, 1e3)).unwrap();
        let (sol, _) = optimize(&g, &SolverConfig::default()).unwrap();
        let traj = estimate_trajectory(&sol, 1, &[0.0, 0.05, 0.1]).unwrap();
        assert!(traj[0].pose.x.abs() < 1e-9);
        assert!((traj[1].pose.x - 0.05).abs() < 1e-9);
        assert!((traj[2].pose.x - 0.1).abs() < 1e-9);
        assert!(matches!(estimate_trajectory(&sol, 9, &[0.0]), Err(LocError::UnknownTarget(9))));
    }
}
