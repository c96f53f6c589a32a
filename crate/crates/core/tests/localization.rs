use std::collections::BTreeMap;
use std::sync::Arc;

use autolab_core::localization::{
    build_graph, localize, optimize, Detection, DetectionNoise, LocalizationConfig, NodeRef, PoseGraph,
    SmoothnessPrior, SolverConfig,
};
use autolab_core::protocol::{run_robot_node, InProcessLink, RobotNodeConfig};
use autolab_core::simworld::{
    interpolate, normalize_angle, BaselineAgent, Conditions, EpisodeConfig, LabEpisode, Pose2, RobotParams,
    TerminationConfig, TileMap, TimedPose,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pose(rng: &mut ChaCha8Rng, span: f64) -> Pose2 {
    Pose2::new(
        rng.random_range(-span..span),
        rng.random_range(-span..span),
        rng.random_range(-3.1..3.1),
    )
}

/// Random anchored graph with exact measurements of `truth`.
fn random_graph(seed: u64) -> (PoseGraph, Vec<Pose2>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors: BTreeMap<u32, Pose2> = (0..rng.random_range(1..4)).map(|k| (100 + k, random_pose(&mut rng, 2.0))).collect();
    let targets = rng.random_range(1..3u32);
    let keyframes = rng.random_range(2..6i64);
    let mut truth: BTreeMap<u32, Vec<TimedPose>> = BTreeMap::new();
    for target in 0..targets {
        truth.insert(
            target,
            (0..keyframes).map(|k| TimedPose { t: k as f64 * 0.1, pose: random_pose(&mut rng, 1.0) }).collect(),
        );
    }
    let mut dets = Vec::new();
    for (&target, traj) in &truth {
        for p in traj {
            for (&id, a) in &anchors {
                if rng.random_bool(0.7) || id == 100 {
                    dets.push(Detection {
                        observer_id: id,
                        target_id: target,
                        t: p.t,
                        z: a.between(&p.pose),
                        info: DetectionNoise { sigma_xy: 0.01, sigma_theta: 0.02 }.info(),
                    });
                }
            }
        }
    }
    // a robot-to-robot sighting when there are two targets
    if targets == 2 {
        let (a, b) = (truth[&0][0].pose, truth[&1][0].pose);
        dets.push(Detection {
            observer_id: 0,
            target_id: 1,
            t: 0.0,
            z: a.between(&b),
            info: DetectionNoise { sigma_xy: 0.02, sigma_theta: 0.05 }.info(),
        });
    }
    // smoothness edges are deliberately inconsistent with the truth
    let graph = build_graph(&dets, &anchors, 0.1, SmoothnessPrior::from_sigmas(10.0, 10.0)).unwrap();
    let ordered: Vec<Pose2> = graph.nodes.iter().map(|k| truth[&k.target][k.keyframe as usize].pose).collect();
    (graph, ordered)
}

#[test]
fn analytic_jacobians_match_central_differences() {
    let h = 1e-6;
    for seed in 0..100 {
        let (graph, truth) = random_graph(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        // evaluate away from the optimum so residuals are not all zero
        let x: Vec<Pose2> = truth
            .iter()
            .map(|p| Pose2::new(p.x + rng.random_range(-0.2..0.2), p.y + rng.random_range(-0.2..0.2), p.theta + rng.random_range(-0.3..0.3)))
            .collect();
        for k in 0..graph.edges.len() {
            let lin = graph.linearize(k, &x);
            let edge = graph.edges[k];
            for (end, jac) in [(edge.a, lin.ja), (edge.b, lin.jb)] {
                let NodeRef::Var(i) = end else { continue };
                for c in 0..3 {
                    let bump = |d: f64| {
                        let mut y = x.clone();
                        let p = y[i];
                        // bypass theta normalisation so the difference is taken on the raw coordinate
                        y[i] = match c {
                            0 => Pose2 { x: p.x + d, ..p },
                            1 => Pose2 { y: p.y + d, ..p },
                            _ => Pose2 { theta: p.theta + d, ..p },
                        };
                        graph.residual(k, &y)
                    };
                    let (plus, minus) = (bump(h), bump(-h));
                    for r in 0..3 {
                        let diff = if r == 2 { normalize_angle(plus[r] - minus[r]) } else { plus[r] - minus[r] };
                        let fd = diff / (2.0 * h);
                        let an = jac[r][c];
                        let scale = an.abs().max(fd.abs()).max(1.0);
                        assert!((an - fd).abs() / scale < 1e-5, "seed {seed} edge {k} row {r} col {c}: {an} vs {fd}");
                    }
                }
            }
        }
    }
}

#[test]
fn zero_noise_graphs_recover_truth_from_perturbed_start() {
    for seed in 0..50 {
        let (mut graph, truth) = random_graph(seed);
        // drop the weak smoothness edges, which disagree with arbitrary poses
        graph.edges.retain(|e| {
            !matches!((e.a, e.b), (NodeRef::Var(a), NodeRef::Var(b)) if graph.nodes[a].target == graph.nodes[b].target)
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (init, t) in graph.initial.iter_mut().zip(&truth) {
            let s = |r: &mut ChaCha8Rng| if r.random_bool(0.5) { 1.0 } else { -1.0 };
            *init = Pose2::new(t.x + 0.1 * s(&mut rng), t.y + 0.1 * s(&mut rng), t.theta + 0.1 * s(&mut rng));
        }
        let (sol, stats) = optimize(&graph, &SolverConfig::default()).unwrap();
        for (got, want) in sol.poses.iter().zip(&truth) {
            assert!((got.x - want.x).abs() < 1e-6, "seed {seed}");
            assert!((got.y - want.y).abs() < 1e-6, "seed {seed}");
            assert!(normalize_angle(got.theta - want.theta).abs() < 1e-6, "seed {seed}");
        }
        let mut prev = stats.initial_chi2;
        for &c in &stats.chi2_history {
            assert!(c <= prev);
            prev = c;
        }
    }
}

#[test]
fn solution_does_not_depend_on_initialisation() {
    let (mut graph, _) = random_graph(7);
    let (a, _) = optimize(&graph, &SolverConfig::default()).unwrap();
    for p in &mut graph.initial {
        *p = Pose2::new(p.x + 0.05, p.y - 0.05, p.theta + 0.05);
    }
    let (b, _) = optimize(&graph, &SolverConfig::default()).unwrap();
    for (p, q) in a.poses.iter().zip(&b.poses) {
        assert!(p.distance(q) < 1e-6 && normalize_angle(p.theta - q.theta).abs() < 1e-6);
    }
}

#[test]
fn standard_loop_reconstruction_is_within_three_sigma() {
    let map = Arc::new(TileMap::from_toml(autolab_core::assets::STANDARD_LOOP).unwrap());
    for seed in [1u64, 2, 3] {
        let mut ep = LabEpisode::new(EpisodeConfig {
            map: map.clone(),
            termination: TerminationConfig::default(),
            rate_hz: 10.0,
            conditions: Conditions::default(),
            seed,
            start: Pose2::new(0.6, 0.15, 0.0),
            params: RobotParams::default(),
            passive: Vec::new(),
        })
        .unwrap();
        run_robot_node(&mut InProcessLink::new(BaselineAgent::default()), &mut ep, &RobotNodeConfig::default()).unwrap();
        let out = ep.into_outcome();
        let cfg = LocalizationConfig { sigma_xy: 0.01, ..Default::default() };
        let rec = localize(&out.truth, &map, &cfg, seed).unwrap();
        let est = &rec.solution.trajectories[&1];
        let truth = &out.truth[&1];
        let sq: f64 = est.iter().map(|k| interpolate(truth, k.t).distance(&k.pose).powi(2)).sum();
        let rmse = (sq / est.len() as f64).sqrt();
        assert!(rmse <= 0.03, "seed {seed}: rmse {rmse}");
        assert!(rec.stats.final_chi2 <= rec.stats.initial_chi2);
    }
}
