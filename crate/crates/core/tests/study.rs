use std::sync::Arc;

use autolab_core::metrics::REFERENCE_ROWS;
use autolab_core::par;
use autolab_core::study::{execute_run, run_study, StudyConfig, StudyError, StudyKind};

#[test]
fn noiseless_study_has_zero_spread() {
    let mut cfg = StudyConfig::noiseless(3);
    cfg.spec.termination.time_limit = 8.0;
    let r = run_study(&cfg, &StudyKind::ALL).unwrap();
    for row in &r.table.rows {
        assert_eq!(row.mpd_std_cm, 0.0, "{row:?}");
        assert_eq!(row.mod_std_deg, 0.0, "{row:?}");
    }
    assert_eq!(r.data.runs.len(), 30);
}

#[test]
fn shipped_fleet_orders_the_studies() {
    let r = run_study(&StudyConfig::standard(11), &StudyKind::ALL).unwrap();
    let g = |k: &str| r.table.row(k).unwrap().mpd_std_cm;
    assert!(g("same_robot") > 0.0);
    assert!(g("same_robot") < g("cross_lab"), "{}", r.table.render());
    assert!(g("cross_lab") < g("inter_robot"), "{}", r.table.render());
    assert_eq!(r.table.rows.iter().map(|x| x.runs).collect::<Vec<_>>(), vec![9, 9, 12]);
    assert_eq!(REFERENCE_ROWS.len(), 3);
}

#[test]
fn the_fleet_is_shared_across_master_seeds() {
    let a = StudyConfig::standard(1).plan(&StudyKind::ALL);
    let b = StudyConfig::standard(2).plan(&StudyKind::ALL);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.hardware_seed, y.hardware_seed);
        assert_ne!(x.seed, y.seed);
    }
    let same = a.iter().find(|p| p.kind == StudyKind::SameRobot).unwrap().hardware_seed;
    let cross_home = a.iter().find(|p| p.kind == StudyKind::CrossLab && p.lab == 0).unwrap().hardware_seed;
    assert_eq!(same, cross_home);
}

#[test]
fn parallel_and_sequential_runs_agree() {
    let mut cfg = StudyConfig::standard(5);
    cfg.spec.termination.time_limit = 5.0;
    let map = Arc::new(cfg.spec.load_map(None).unwrap());
    let plan = cfg.plan(&[StudyKind::InterRobot]);
    let p = par::map_indexed(plan.len(), |i| execute_run(&cfg, &map, &plan[i]).unwrap());
    let s = par::map_sequential(plan.len(), |i| execute_run(&cfg, &map, &plan[i]).unwrap());
    assert_eq!(p, s);
}

#[test]
fn failing_runs_keep_partial_data() {
    let mut cfg = StudyConfig::standard(1);
    cfg.spec.termination.time_limit = 3.0;
    cfg.spec.compliance.insert("trim".into(), [0.9, 1.0]);
    match run_study(&cfg, &[StudyKind::SameRobot]) {
        Err(StudyError::Run { group, run, reason, .. }) => {
            assert_eq!(group, "same_robot");
            assert_eq!(run, 0);
            assert!(reason.contains("compliance"), "{reason}");
        }
        other => panic!("{other:?}"),
    }
}
