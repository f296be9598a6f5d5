use hallunav::bench::planners::ScriptedPlanner;
use hallunav::bench::{head_on_scenarios, run_trial, TrialConfig};
use hallunav::lidar::{cast_scan, LidarParams};
use hallunav::safety::{extrapolate_scans, SafetyConfig};
use hallunav::world::{Pose, Segment};
use proptest::prelude::*;

fn trial_cfg(enabled: bool) -> TrialConfig {
    TrialConfig {
        timeout: 40.0,
        safety: SafetyConfig { enabled, ..SafetyConfig::default() },
        ..TrialConfig::default()
    }
}

#[test]
fn head_on_scenarios_without_contact() {
    let envs = head_on_scenarios(50, 8);
    let mut unguarded = 0;
    let mut reached = 0;
    for (i, env) in envs.iter().enumerate() {
        let on = run_trial(env, &mut ScriptedPlanner::default(), &trial_cfg(true), i as u64).unwrap();
        assert!(!on.collision, "{}: contact with safety on (clearance {:.3})", env.id, on.min_clearance);
        reached += on.success as usize;
        let off = run_trial(env, &mut ScriptedPlanner::default(), &trial_cfg(false), i as u64).unwrap();
        unguarded += off.collision as usize;
    }
    // the scenarios are only meaningful if the unguarded robot hits
    assert!(unguarded > 25, "only {unguarded}/50 unguarded contacts");
    assert!(reached >= 45, "only {reached}/50 reached the goal");
}

#[test]
fn extrapolated_disk_tracks_ground_truth() {
    let params = LidarParams::default();
    for (speed, heading) in [(0.3, std::f64::consts::PI), (0.5, 2.5), (0.2, -2.0)] {
        let c0 = [3.0, 0.4];
        let step = [speed * 0.1 * f64::cos(heading), speed * 0.1 * f64::sin(heading)];
        let at = |k: f64| [c0[0] + k * step[0], c0[1] + k * step[1]];
        let prev = cast_scan(&Pose::origin(), &[(at(0.0), 0.35)], &[], &params);
        let now = cast_scan(&Pose::origin(), &[(at(1.0), 0.35)], &[], &params);
        for (k, pred) in extrapolate_scans(&prev, &now, 10, 0.3).iter().enumerate() {
            let truth = cast_scan(&Pose::origin(), &[(at(k as f64 + 2.0), 0.35)], &[], &params);
            let nearest = |s: &hallunav::lidar::LidarScan| s.min_range();
            let err = (nearest(pred) - nearest(&truth)).abs();
            assert!(err < 0.01 + 0.01 * k as f64, "speed {speed} step {k}: {err}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn static_worlds_extrapolate_to_themselves(
        disks in prop::collection::vec((1.0f64..8.0, -4.0f64..4.0, 0.1f64..0.6), 0..6),
        wall in 1.0f64..9.0,
        steps in 1usize..15,
    ) {
        let params = LidarParams::default();
        let d: Vec<_> = disks.iter().map(|&(x, y, r)| ([x, y], r)).collect();
        let w = [Segment { a: [wall, -10.0], b: [wall, 10.0] }];
        let s = cast_scan(&Pose::origin(), &d, &w, &params);
        for p in extrapolate_scans(&s, &s, steps, 0.3) {
            for (a, b) in p.ranges.iter().zip(&s.ranges) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
