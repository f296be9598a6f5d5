mod common;

use common::dwa_oracle as oracle;
use hallunav::bench::dwa::{dwa_plan, DwaConfig};
use hallunav::lidar::{cast_scan, LidarParams};
use hallunav::world::{ControlAction, Pose, Segment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn argmin_matches_exhaustive_oracle() {
    let cfg = DwaConfig::default();
    let params = LidarParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut stops = 0;
    for case in 0..100 {
        let disks: Vec<_> = (0..rng.random_range(0..8))
            .map(|_| ([rng.random_range(-1.0..5.0), rng.random_range(-3.0..3.0)], rng.random_range(0.1..0.5)))
            .filter(|(c, r): &([f64; 2], f64)| c[0].hypot(c[1]) > r + 0.3)
            .collect();
        let mut walls = Vec::new();
        if rng.random_bool(0.5) {
            let x = rng.random_range(0.6..4.0);
            walls.push(Segment { a: [x, -5.0], b: [x, rng.random_range(-1.0..5.0)] });
        }
        let scan = cast_scan(&Pose::origin(), &disks, &walls, &params);
        let goal = {
            let a: f64 = rng.random_range(-3.0..3.0);
            [2.5 * a.cos(), 2.5 * a.sin()]
        };
        let current = if case % 3 == 0 {
            ControlAction::stop()
        } else {
            ControlAction::new(rng.random_range(-0.2..1.0), rng.random_range(-1.57..1.57))
        };
        let tight = DwaConfig { acc_v: rng.random_range(1.0..10.0), acc_w: rng.random_range(2.0..20.0), ..cfg };
        let c = if case % 2 == 0 { cfg } else { tight };
        let pts = scan.points();
        let got = dwa_plan(&pts, goal, current, &c).action;
        let want = oracle(&pts, goal, current, &c);
        assert_eq!(got, want, "case {case}");
        stops += (got == ControlAction::stop()) as usize;
    }
    assert!(stops < 50);
}

#[test]
fn symmetric_scene_breaks_ties_deterministically() {
    let cfg = DwaConfig::default();
    // goal straight behind: left and right turns cost the same
    let d = dwa_plan(&[], [-2.5, 0.0], ControlAction::stop(), &cfg);
    let want = oracle(&[], [-2.5, 0.0], ControlAction::stop(), &cfg);
    assert_eq!(d.action, want);
}

#[test]
fn wall_dead_ahead_picks_a_free_rollout() {
    let cfg = DwaConfig::default();
    let wall = Segment { a: [0.5, -3.0], b: [0.5, 3.0] };
    let scan = cast_scan(&Pose::origin(), &[], &[wall], &LidarParams::default());
    let pts = scan.points();
    let d = dwa_plan(&pts, [2.5, 0.0], ControlAction::stop(), &cfg);
    assert!(d.best.is_some());
    assert!(d.best.unwrap().clearance > 0.0);
    assert_eq!(d.action, oracle(&pts, [2.5, 0.0], ControlAction::stop(), &cfg));
}
