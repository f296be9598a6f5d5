//! Procedural benchmark environments.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::world::{Arena, EnvSpec, MotionProfile, ObstacleScript};
use crate::world::{dist, Pose};

/// Obstacle count range and speed range per difficulty level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub obstacles: [usize; 2],
    pub speed: [f64; 2],
}

pub fn default_levels() -> Vec<Level> {
    vec![
        Level { obstacles: [0, 0], speed: [0.0, 0.0] },
        Level { obstacles: [2, 3], speed: [0.2, 0.6] },
        Level { obstacles: [4, 5], speed: [0.2, 0.9] },
        Level { obstacles: [6, 8], speed: [0.2, 1.2] },
        Level { obstacles: [9, 10], speed: [0.2, 1.5] },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvGenConfig {
    pub count: usize,
    pub seed: u64,
    pub arena: Arena,
    pub levels: Vec<Level>,
    /// Relative share of environments per level.
    pub weights: Vec<f64>,
    pub radius: [f64; 2],
}

impl Default for EnvGenConfig {
    fn default() -> Self {
        Self {
            count: 20,
            seed: 0,
            arena: Arena { width: 14.0, height: 7.0 },
            levels: default_levels(),
            weights: vec![0.0, 1.0, 1.0, 1.0, 1.0],
            radius: [0.15, 0.3],
        }
    }
}

impl EnvGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidConfig("environment count must be at least 1".into()));
        }
        if self.weights.len() != self.levels.len() || self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidConfig("one non-negative weight per difficulty level required".into()));
        }
        if self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidConfig("difficulty weights sum to zero".into()));
        }
        for l in &self.levels {
            if l.obstacles[0] > l.obstacles[1] || l.speed[0] > l.speed[1] || l.speed[0] < 0.0 {
                return Err(Error::InvalidConfig("difficulty level ranges inverted".into()));
            }
        }
        if !(self.radius[0] > 0.0 && self.radius[0] <= self.radius[1]) {
            return Err(Error::InvalidConfig("obstacle radius range invalid".into()));
        }
        if !(self.arena.width >= 6.0 && self.arena.height >= 3.0) {
            return Err(Error::InvalidConfig("arena too small".into()));
        }
        Ok(())
    }

    /// Environments per level, by largest remainder.
    pub fn quotas(&self) -> Vec<usize> {
        let total: f64 = self.weights.iter().sum();
        let exact: Vec<f64> = self.weights.iter().map(|w| w / total * self.count as f64).collect();
        let mut q: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = (0..q.len()).collect();
        order.sort_by(|&a, &b| (exact[b] - q[b] as f64).total_cmp(&(exact[a] - q[a] as f64)).then(a.cmp(&b)));
        let short = self.count - q.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            q[i] += 1;
        }
        q
    }
}

fn random_profile<R: Rng>(rng: &mut R, speed: f64, arena: &Arena) -> MotionProfile {
    let heading = rng.random_range(-PI..PI);
    let vel = [speed * heading.cos(), speed * heading.sin()];
    match rng.random_range(0..4) {
        0 => MotionProfile::Shuttle { velocity: vel, span: rng.random_range(2.0..6.0) },
        1 => MotionProfile::WallBounce { velocity: vel },
        2 => MotionProfile::Sinusoidal {
            speed,
            heading,
            amplitude: rng.random_range(0.3..1.0),
            period: rng.random_range(2.0..6.0),
        },
        _ => MotionProfile::Waypoints {
            speed,
            points: (0..4)
                .map(|_| {
                    [
                        rng.random_range(0.5..arena.width - 0.5),
                        rng.random_range(0.5..arena.height - 0.5),
                    ]
                })
                .collect(),
            looped: true,
        },
    }
}

fn build_env(cfg: &EnvGenConfig, index: usize, difficulty: usize) -> EnvSpec {
    let seed = derive_seed(cfg.seed, &[index as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = cfg.arena;
    let start = Pose::new(1.0, 0.5 * a.height, 0.0);
    let goal = Pose::new(a.width - 1.0, 0.5 * a.height, 0.0);
    let level = cfg.levels[difficulty];
    let n = rng.random_range(level.obstacles[0]..=level.obstacles[1]);
    let mut obstacles: Vec<ObstacleScript> = Vec::with_capacity(n);
    while obstacles.len() < n {
        let radius = rng.random_range(cfg.radius[0]..=cfg.radius[1]);
        let mut placed = None;
        for _ in 0..200 {
            let p = [
                rng.random_range(3.0..a.width - 3.0),
                rng.random_range(radius + 0.3..a.height - radius - 0.3),
            ];
            let clear = dist(p, start.position()) > 2.0
                && dist(p, goal.position()) > 2.0
                && obstacles.iter().all(|o| dist(p, o.start) > o.radius + radius + 0.2);
            if clear {
                placed = Some(p);
                break;
            }
        }
        let Some(p) = placed else { break };
        let speed = rng.random_range(level.speed[0]..=level.speed[1]);
        obstacles.push(ObstacleScript { radius, start: p, profile: random_profile(&mut rng, speed, &a) });
    }
    EnvSpec {
        id: format!("env-{:03}", index),
        seed,
        difficulty: difficulty as u32,
        arena: a,
        start,
        goal,
        walls: vec![],
        obstacles,
    }
}

/// `cfg.count` environments with per-level counts given by
/// [`EnvGenConfig::quotas`], in a seeded order.
pub fn generate_envs(cfg: &EnvGenConfig) -> Result<Vec<EnvSpec>> {
    cfg.validate()?;
    let mut levels: Vec<usize> = cfg
        .quotas()
        .iter()
        .enumerate()
        .flat_map(|(l, &q)| std::iter::repeat_n(l, q))
        .collect();
    levels.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[u64::MAX])));
    let envs: Vec<EnvSpec> = levels.iter().enumerate().map(|(i, &l)| build_env(cfg, i, l)).collect();
    for e in &envs {
        e.validate()?;
    }
    Ok(envs)
}

/// Environments per difficulty level.
pub fn difficulty_histogram(envs: &[EnvSpec], levels: usize) -> Vec<usize> {
    let mut h = vec![0; levels];
    for e in envs {
        if let Some(x) = h.get_mut(e.difficulty as usize) {
            *x += 1;
        }
    }
    h
}

/// An obstacle walks down the robot's lane toward it, then steps 2 m to one
/// side and stays there. Speeds are at most 0.5 m/s.
pub fn head_on_scenarios(count: usize, seed: u64) -> Vec<EnvSpec> {
    let arena = Arena { width: 14.0, height: 7.0 };
    (0..count)
        .map(|i| {
            let s = derive_seed(seed, &[i as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let y = 0.5 * arena.height;
            let x0 = rng.random_range(6.0..9.0);
            let y0 = y + rng.random_range(-0.15..0.15);
            let approach = rng.random_range(1.0..2.0);
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let speed = rng.random_range(0.2..=0.5);
            EnvSpec {
                id: format!("head-on-{i:03}"),
                seed: s,
                difficulty: 1,
                arena,
                start: Pose::new(1.5, y, 0.0),
                goal: Pose::new(12.5, y, 0.0),
                walls: vec![],
                obstacles: vec![ObstacleScript {
                    radius: rng.random_range(0.2..0.4),
                    start: [x0, y0],
                    profile: MotionProfile::Waypoints {
                        speed,
                        points: vec![[x0 - approach, y0], [x0 - approach, y0 + 2.0 * side]],
                        looped: false,
                    },
                }],
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_files() {
        let cfg = EnvGenConfig { count: 6, seed: 5, ..EnvGenConfig::default() };
        let a: Vec<String> = generate_envs(&cfg).unwrap().iter().map(|e| e.to_text().unwrap()).collect();
        let b: Vec<String> = generate_envs(&cfg).unwrap().iter().map(|e| e.to_text().unwrap()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn difficulty_zero_is_empty() {
        let cfg = EnvGenConfig { count: 3, weights: vec![1.0, 0.0, 0.0, 0.0, 0.0], ..EnvGenConfig::default() };
        assert!(generate_envs(&cfg).unwrap().iter().all(|e| e.obstacles.is_empty()));
    }

    #[test]
    fn histogram_matches_knobs() {
        let cfg = EnvGenConfig { count: 40, seed: 2, weights: vec![1.0, 2.0, 3.0, 2.0, 2.0], ..EnvGenConfig::default() };
        let envs = generate_envs(&cfg).unwrap();
        assert_eq!(difficulty_histogram(&envs, 5), vec![4, 8, 12, 8, 8]);
        for e in &envs {
            let l = cfg.levels[e.difficulty as usize];
            assert!((l.obstacles[0]..=l.obstacles[1]).contains(&e.obstacles.len()), "{}", e.id);
            for o in &e.obstacles {
                assert!(o.max_speed() >= l.speed[0] - 1e-12 && o.max_speed() <= l.speed[1] + 1e-12);
            }
        }
    }

    #[test]
    fn quotas_sum_to_count() {
        let cfg = EnvGenConfig { count: 7, weights: vec![0.0, 1.0, 1.0, 1.0, 0.5], ..EnvGenConfig::default() };
        assert_eq!(cfg.quotas().iter().sum::<usize>(), 7);
    }

    #[test]
    fn some_obstacles_outrun_the_robot() {
        let cfg = EnvGenConfig { count: 20, seed: 1, ..EnvGenConfig::default() };
        let envs = generate_envs(&cfg).unwrap();
        assert!(envs.iter().flat_map(|e| &e.obstacles).any(|o| o.max_speed() > 1.0));
    }

    #[test]
    fn head_on_speeds_are_bounded() {
        for e in head_on_scenarios(50, 0) {
            e.validate().unwrap();
            assert!(e.obstacles[0].max_speed() <= 0.5);
        }
    }
}
