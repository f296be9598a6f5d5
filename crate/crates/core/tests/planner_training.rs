use hallunav::dataset::TrainSample;
use hallunav::lidar::{cast_scan, LidarParams};
use hallunav::planner::*;
use hallunav::world::{ControlAction, Pose};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_sample(rng: &mut ChaCha8Rng, l: usize, beams: usize, plan: u32) -> TrainSample {
    TrainSample {
        plan,
        draw: 0,
        index: 0,
        flagged: false,
        history: (0..l * beams).map(|_| rng.random_range(0.1f32..10.0)).collect(),
        goal: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        action: ControlAction::new(rng.random_range(0.0..1.0), rng.random_range(-1.5..1.5)),
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let arch = PlannerArch::new(5, 720);
    let w = PlannerWeights::init(arch, 10.0, 4).unwrap();
    let samples: Vec<_> = (0..4).map(|i| random_sample(&mut rng, 5, 720, i)).collect();
    let refs: Vec<&TrainSample> = samples.iter().collect();
    let batch = Batch::from_samples(&refs, &arch, 10.0).unwrap();
    let (_, grad) = batch_loss_grad(&w, &batch, 1.0, refs.len() as f64);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut probed = 0;
    while probed < 50 {
        let k = rng.random_range(0..w.params.len());
        let mut wp = w.clone();
        wp.params[k] += h;
        let up = batch_loss(&wp, &batch, 1.0);
        wp.params[k] -= 2.0 * h;
        let down = batch_loss(&wp, &batch, 1.0);
        let fd = (up - down) / (2.0 * h);
        let scale = grad[k].abs().max(fd.abs());
        if scale < 1e-8 {
            continue;
        }
        worst = worst.max((grad[k] - fd).abs() / scale);
        probed += 1;
    }
    assert!(worst < 1e-3, "worst relative error {worst:e}");
}

#[test]
fn memorizes_one_repeated_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = random_sample(&mut rng, 5, 720, 0);
    let samples = vec![s; 8];
    let cfg = PlannerConfig {
        epochs: 500,
        batch_size: 8,
        ..PlannerConfig::default()
    };
    let t = train_on_samples(&samples, 5, LidarParams::default(), &cfg).unwrap();
    let first = t.log.iter().find(|e| e.train < 1e-4).map(|e| e.epoch);
    assert!(first.is_some_and(|e| e <= 500), "final train loss {:e}", t.log.last().unwrap().train);
}

/// Scans of one disk at a random bearing; the label turns away from it and
/// slows down when it is close.
fn obstacle_task(plans: u32, per_plan: usize, seed: u64) -> (Vec<TrainSample>, LidarParams) {
    let params = LidarParams {
        beam_count: 90,
        ..LidarParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for plan in 0..plans {
        for index in 0..per_plan {
            let bearing: f64 = rng.random_range(-1.2..1.2);
            let range: f64 = rng.random_range(0.8..4.0);
            let c = [range * bearing.cos(), range * bearing.sin()];
            let scan = cast_scan(&Pose::origin(), &[(c, 0.4)], &[], &params);
            let history: Vec<f32> = (0..3).flat_map(|_| scan.ranges.iter().map(|&r| r as f32)).collect();
            out.push(TrainSample {
                plan,
                draw: 0,
                index: index as u32,
                flagged: false,
                history,
                goal: [1.0, 0.0],
                action: ControlAction::new((range / 4.0).min(1.0), -bearing.signum() * (1.5 - 0.3 * range).max(0.1)),
            });
        }
    }
    (out, params)
}

#[test]
fn held_out_loss_beats_constant_predictor() {
    let (samples, params) = obstacle_task(40, 20, 9);
    let cfg = PlannerConfig {
        hidden: 64,
        epochs: 30,
        ..PlannerConfig::default()
    };
    let t = train_on_samples(&samples, 3, params, &cfg).unwrap();
    let best = t.log.iter().map(|e| e.val).fold(f64::INFINITY, f64::min);
    assert!(best < 0.5 * t.baseline, "val {best} vs baseline {}", t.baseline);
    for p in &t.validation_plans {
        assert!(t.train_plans.binary_search(p).is_err());
    }
}

#[test]
fn shuffled_labels_do_not_beat_the_baseline() {
    let (mut samples, params) = obstacle_task(40, 20, 9);
    let mut actions: Vec<_> = samples.iter().map(|s| s.action).collect();
    actions.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    for (s, a) in samples.iter_mut().zip(actions) {
        s.action = a;
    }
    let cfg = PlannerConfig {
        hidden: 64,
        epochs: 30,
        ..PlannerConfig::default()
    };
    let t = train_on_samples(&samples, 3, params, &cfg).unwrap();
    let best = t.log.iter().map(|e| e.val).fold(f64::INFINITY, f64::min);
    assert!(best > 0.85 * t.baseline, "val {best} vs baseline {}", t.baseline);
}

#[test]
fn training_is_deterministic() {
    let (samples, params) = obstacle_task(10, 10, 4);
    let cfg = PlannerConfig {
        hidden: 16,
        epochs: 3,
        ..PlannerConfig::default()
    };
    let a = train_on_samples(&samples, 3, params, &cfg).unwrap();
    let b = train_on_samples(&samples, 3, params, &cfg).unwrap();
    assert_eq!(a.weights.to_container().to_bytes(), b.weights.to_container().to_bytes());
    assert_eq!(metrics_log_text(&a), metrics_log_text(&b));
}
