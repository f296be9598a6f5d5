//! Closed-loop benchmark: procedural dynamic environments, a fixed-step
//! simulator, baseline planners and metrics tables.

pub mod dwa;
pub mod envgen;
pub mod pipeline;
pub mod planners;

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lidar::{add_range_noise, cast_scan, LidarParams, LidarScan};
use crate::rng::derive_seed;
use crate::safety::SafetyConfig;
use crate::world::{EnvSpec, Segment};
use crate::world::{dist, normalize_angle, step_diff_drive, ControlAction, Pose, RobotLimits, Vec2, DEFAULT_ROBOT_RADIUS};

pub use dwa::{dwa_plan, DwaConfig, DwaDecision};
pub use envgen::{generate_envs, head_on_scenarios, EnvGenConfig};
pub use planners::{build_planner, PlannerSpec};

pub const TRIALS_HEADER: &str = "# hallunav-trials v1";
pub const METRICS_HEADER: &str = "# hallunav-bench-metrics v1";

/// What a planner sees each tick.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub step: usize,
    pub pose: Pose,
    pub scan: &'a LidarScan,
    pub start: Vec2,
    pub goal: Vec2,
}

pub trait Planner: Send {
    fn id(&self) -> String;
    /// Called once before a trial with the trial seed and safety settings.
    fn reset(&mut self, seed: u64, safety: SafetyConfig);
    fn act(&mut self, obs: &Observation<'_>) -> Result<ControlAction>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub dt: f64,
    pub goal_radius: f64,
    pub timeout: f64,
    pub robot_radius: f64,
    pub lidar: LidarParams,
    /// Gaussian range noise, metres.
    pub range_noise: f64,
    /// Uniform start perturbation: lateral metres and yaw radians.
    pub start_jitter: [f64; 2],
    pub safety: SafetyConfig,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            goal_radius: 0.5,
            timeout: 60.0,
            robot_radius: DEFAULT_ROBOT_RADIUS,
            lidar: LidarParams::default(),
            range_noise: 0.01,
            start_jitter: [0.1, 0.1],
            safety: SafetyConfig {
                enabled: false,
                ..SafetyConfig::default()
            },
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.goal_radius > 0.0 && self.timeout > 0.0 && self.robot_radius > 0.0) {
            return Err(Error::InvalidConfig("trial dt, goal radius, timeout and robot radius must be positive".into()));
        }
        if !(self.range_noise >= 0.0 && self.start_jitter.iter().all(|j| *j >= 0.0)) {
            return Err(Error::InvalidConfig("noise and jitter must be non-negative".into()));
        }
        self.lidar.validate()?;
        self.safety.validate()
    }

    pub fn max_steps(&self) -> usize {
        (self.timeout / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub env_id: String,
    pub planner_id: String,
    pub trial: u32,
    pub seed: u64,
    pub success: bool,
    pub collision: bool,
    pub timeout: bool,
    /// Traversal time, present on success only.
    pub time: Option<f64>,
    pub min_clearance: f64,
    pub trajectory: Vec<Pose>,
}

fn point_segment_distance(p: Vec2, s: &Segment) -> f64 {
    let d = [s.b[0] - s.a[0], s.b[1] - s.a[1]];
    let l2 = d[0] * d[0] + d[1] * d[1];
    let t = if l2 > 0.0 {
        (((p[0] - s.a[0]) * d[0] + (p[1] - s.a[1]) * d[1]) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist(p, [s.a[0] + t * d[0], s.a[1] + t * d[1]])
}

/// Signed gap between the robot disk and the nearest obstacle or wall.
pub fn robot_clearance(p: Vec2, robot_radius: f64, disks: &[(Vec2, f64)], walls: &[Segment]) -> f64 {
    let a = disks
        .iter()
        .map(|(c, r)| dist(p, *c) - r - robot_radius)
        .fold(f64::INFINITY, f64::min);
    let b = walls
        .iter()
        .map(|s| point_segment_distance(p, s) - robot_radius)
        .fold(f64::INFINITY, f64::min);
    a.min(b)
}

fn jittered_start(env: &EnvSpec, cfg: &TrialConfig, seed: u64) -> Pose {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5741]));
    let [lat, yaw] = cfg.start_jitter;
    let dy = if lat > 0.0 { rng.random_range(-lat..=lat) } else { 0.0 };
    let dyaw = if yaw > 0.0 { rng.random_range(-yaw..=yaw) } else { 0.0 };
    let s = env.start;
    let n = s.rotate_to_parent([0.0, dy]);
    Pose::new(s.x + n[0], s.y + n[1], normalize_angle(s.yaw + dyaw))
}

/// Simulates one trial. Order per tick: contact check, goal check, timeout,
/// render, plan, integrate. The arena boundary only confines obstacle scripts;
/// the robot senses and can hit obstacles and the env's explicit walls.
pub fn run_trial(env: &EnvSpec, planner: &mut dyn Planner, cfg: &TrialConfig, seed: u64) -> Result<TrialResult> {
    cfg.validate()?;
    env.validate()?;
    let steps = cfg.max_steps();
    let tracks = env.tracks(cfg.dt, steps);
    let walls = env.walls.clone();
    let limits = RobotLimits::default();
    let mut noise = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x4e5a]));
    planner.reset(derive_seed(seed, &[0x504c]), cfg.safety);

    let mut pose = jittered_start(env, cfg, seed);
    let goal = env.goal.position();
    let start = env.start.position();
    let mut trajectory = Vec::with_capacity(steps + 1);
    let mut min_clearance = f64::INFINITY;
    let (mut success, mut collision, mut time) = (false, false, None);
    for t in 0..=steps {
        trajectory.push(pose);
        let disks: Vec<(Vec2, f64)> = env
            .obstacles
            .iter()
            .zip(&tracks)
            .map(|(o, tr)| (tr[t], o.radius))
            .collect();
        let gap = robot_clearance(pose.position(), cfg.robot_radius, &disks, &walls);
        min_clearance = min_clearance.min(gap);
        if gap < 0.0 {
            collision = true;
            break;
        }
        if dist(pose.position(), goal) <= cfg.goal_radius {
            success = true;
            time = Some(t as f64 * cfg.dt);
            break;
        }
        if t == steps {
            break;
        }
        let mut scan = cast_scan(&pose, &disks, &walls, &cfg.lidar);
        if cfg.range_noise > 0.0 {
            add_range_noise(&mut scan, cfg.range_noise, &mut noise);
        }
        let obs = Observation { step: t, pose, scan: &scan, start, goal };
        let u = planner.act(&obs)?;
        if !(u.v.is_finite() && u.w.is_finite()) {
            return Err(Error::NonFinite(format!("{} action", planner.id())));
        }
        pose = step_diff_drive(pose, limits.clamp(u), cfg.dt);
    }
    Ok(TrialResult {
        env_id: env.id.clone(),
        planner_id: planner.id(),
        trial: 0,
        seed,
        success,
        collision,
        timeout: !success && !collision,
        time,
        min_clearance,
        trajectory,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerMetrics {
    pub planner_id: String,
    pub trials: usize,
    pub successes: usize,
    pub collisions: usize,
    pub timeouts: usize,
    pub success_rate: f64,
    /// Mean and standard deviation of traversal time on successes.
    pub tts_mean: Option<f64>,
    pub tts_std: Option<f64>,
}

impl PlannerMetrics {
    pub fn from_trials<'a>(planner_id: &str, trials: impl IntoIterator<Item = &'a TrialResult>) -> Self {
        let mut m = PlannerMetrics {
            planner_id: planner_id.to_string(),
            trials: 0,
            successes: 0,
            collisions: 0,
            timeouts: 0,
            success_rate: 0.0,
            tts_mean: None,
            tts_std: None,
        };
        let mut times = Vec::new();
        for r in trials.into_iter().filter(|r| r.planner_id == planner_id) {
            m.trials += 1;
            m.successes += r.success as usize;
            m.collisions += r.collision as usize;
            m.timeouts += r.timeout as usize;
            times.extend(r.time);
        }
        if m.trials > 0 {
            m.success_rate = m.successes as f64 / m.trials as f64;
        }
        if !times.is_empty() {
            let n = times.len() as f64;
            let mean = times.iter().sum::<f64>() / n;
            let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
            m.tts_mean = Some(mean);
            m.tts_std = Some(var.sqrt());
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub trials: Vec<TrialResult>,
    pub metrics: Vec<PlannerMetrics>,
}

/// Every planner on every env for `trials` trials. Trials run in parallel and
/// come back in (planner, env, trial) order.
pub fn evaluate(planners: &[PlannerSpec], envs: &[EnvSpec], trials: usize, seed: u64, cfg: &TrialConfig) -> Result<Evaluation> {
    if planners.is_empty() {
        return Err(Error::Empty("planner list"));
    }
    if envs.is_empty() {
        return Err(Error::Empty("environment list"));
    }
    let jobs: Vec<(usize, usize, usize)> = (0..planners.len())
        .flat_map(|p| (0..envs.len()).flat_map(move |e| (0..trials).map(move |k| (p, e, k))))
        .collect();
    let results: Vec<Result<TrialResult>> = jobs
        .par_iter()
        .map(|&(p, e, k)| {
            let mut planner = build_planner(&planners[p])?;
            let s = derive_seed(seed, &[e as u64, k as u64]);
            let mut r = run_trial(&envs[e], planner.as_mut(), cfg, s)?;
            r.trial = k as u32;
            Ok(r)
        })
        .collect();
    let trials: Vec<TrialResult> = results.into_iter().collect::<Result<_>>()?;
    let metrics = planners
        .iter()
        .map(|p| PlannerMetrics::from_trials(&p.id(), &trials))
        .collect();
    Ok(Evaluation { trials, metrics })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

/// Tab-separated per-planner table.
pub fn metrics_table(metrics: &[PlannerMetrics]) -> String {
    let mut s = format!("{METRICS_HEADER}\nplanner\ttrials\tsuccesses\tcollisions\ttimeouts\tsuccess_rate\ttts_mean\ttts_std\n");
    for m in metrics {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{:.4}\t{}\t{}",
            m.planner_id,
            m.trials,
            m.successes,
            m.collisions,
            m.timeouts,
            m.success_rate,
            opt(m.tts_mean),
            opt(m.tts_std)
        );
    }
    s
}

#[derive(Serialize, Deserialize)]
struct TrialFile {
    trials: Vec<TrialResult>,
}

pub fn trials_to_text(trials: &[TrialResult]) -> Result<String> {
    let body = toml::to_string(&TrialFile { trials: trials.to_vec() })?;
    Ok(format!("{TRIALS_HEADER}\n{body}"))
}

pub fn trials_from_text(text: &str) -> Result<Vec<TrialResult>> {
    let body = text
        .strip_prefix(TRIALS_HEADER)
        .ok_or_else(|| Error::Format(format!("missing header {TRIALS_HEADER:?}")))?;
    let f: TrialFile = toml::from_str(body)?;
    Ok(f.trials)
}

pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.tsv"), metrics_table(&eval.metrics))?;
    std::fs::write(dir.join("trials.toml"), trials_to_text(&eval.trials)?)?;
    Ok(())
}
