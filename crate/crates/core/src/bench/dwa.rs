//! Dynamic window approach over a fixed (v, w) sample grid, scored against
//! the newest scan's hit points.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{normalize_angle, step_diff_drive, ControlAction, Pose, Vec2, DEFAULT_ROBOT_RADIUS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwaConfig {
    pub v_min: f64,
    pub v_max: f64,
    pub w_max: f64,
    pub acc_v: f64,
    pub acc_w: f64,
    pub v_samples: usize,
    pub w_samples: usize,
    pub sim_time: f64,
    /// Path length between rollout checks.
    pub granularity: f64,
    /// Control period the acceleration window is computed over.
    pub dt: f64,
    pub w_heading: f64,
    pub w_clearance: f64,
    pub w_velocity: f64,
    pub robot_radius: f64,
    /// Clearances are saturated here.
    pub clearance_cap: f64,
}

impl Default for DwaConfig {
    fn default() -> Self {
        Self {
            v_min: 0.1,
            v_max: 1.0,
            w_max: 1.57,
            acc_v: 10.0,
            acc_w: 20.0,
            v_samples: 12,
            w_samples: 40,
            sim_time: 2.0,
            granularity: 0.02,
            dt: 0.1,
            w_heading: 1.0,
            w_clearance: 0.5,
            w_velocity: 0.2,
            robot_radius: DEFAULT_ROBOT_RADIUS,
            clearance_cap: 1.0,
        }
    }
}

impl DwaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.v_samples == 0 || self.w_samples == 0 {
            return Err(Error::InvalidConfig("DWA resolutions must be at least 1".into()));
        }
        if !(self.sim_time > 0.0 && self.granularity > 0.0 && self.dt > 0.0) {
            return Err(Error::InvalidConfig("DWA simulation time, granularity and dt must be positive".into()));
        }
        if !(self.v_min <= self.v_max && self.w_max >= 0.0 && self.acc_v >= 0.0 && self.acc_w >= 0.0) {
            return Err(Error::InvalidConfig("DWA velocity or acceleration limits inconsistent".into()));
        }
        if !(self.robot_radius > 0.0 && self.clearance_cap > 0.0) {
            return Err(Error::InvalidConfig("DWA radii must be positive".into()));
        }
        Ok(())
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn window(current: f64, acc: f64, dt: f64, lo: f64, hi: f64) -> (f64, f64) {
    let a = (current - acc * dt).max(lo);
    let b = (current + acc * dt).min(hi);
    if a <= b {
        (a, b)
    } else if b < lo {
        (lo, lo)
    } else {
        (hi, hi)
    }
}

/// The `v_samples x w_samples` grid admissible from `current`. When the
/// angular window contains zero, the sample nearest zero is replaced by an
/// exact zero so straight motion is always on the grid.
pub fn dwa_grid(current: ControlAction, cfg: &DwaConfig) -> (Vec<f64>, Vec<f64>) {
    let (v0, v1) = window(current.v, cfg.acc_v, cfg.dt, cfg.v_min, cfg.v_max);
    let (w0, w1) = window(current.w, cfg.acc_w, cfg.dt, -cfg.w_max, cfg.w_max);
    let vs = linspace(v0, v1, cfg.v_samples);
    let mut ws = linspace(w0, w1, cfg.w_samples);
    if w0 <= 0.0 && 0.0 <= w1 {
        let k = (0..ws.len())
            .min_by(|&a, &b| ws[a].abs().total_cmp(&ws[b].abs()).then(a.cmp(&b)))
            .unwrap_or(0);
        ws[k] = 0.0;
    }
    (vs, ws)
}

/// Rollout poses after each granularity step (the start pose excluded).
pub fn dwa_rollout(u: ControlAction, cfg: &DwaConfig) -> Vec<Pose> {
    let n = ((u.v.abs() * cfg.sim_time / cfg.granularity).ceil() as usize).max(1);
    let h = cfg.sim_time / n as f64;
    let mut pose = Pose::origin();
    (0..n)
        .map(|_| {
            pose = step_diff_drive(pose, u, h);
            pose
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub action: ControlAction,
    pub cost: f64,
    pub clearance: f64,
}

/// Orders candidates: cost, then larger v, then smaller |w|, then smaller w.
pub fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    a.cost
        .total_cmp(&b.cost)
        .then(b.action.v.total_cmp(&a.action.v))
        .then(a.action.w.abs().total_cmp(&b.action.w.abs()))
        .then(a.action.w.total_cmp(&b.action.w))
}

fn gap(p: Vec2, q: Vec2) -> f64 {
    ((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1])).sqrt()
}

fn score(rollout: &[Pose], points: &[Vec2], goal: Vec2, u: ControlAction, cfg: &DwaConfig) -> Option<Candidate> {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in rollout {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let m = cfg.robot_radius + cfg.clearance_cap;
    let near: Vec<Vec2> = points
        .iter()
        .copied()
        .filter(|q| q[0] >= x0 - m && q[0] <= x1 + m && q[1] >= y0 - m && q[1] <= y1 + m)
        .collect();
    let mut d = f64::INFINITY;
    for p in rollout {
        for q in &near {
            d = d.min(gap(p.position(), *q));
        }
    }
    let clearance = (d - cfg.robot_radius).min(cfg.clearance_cap);
    if clearance <= 0.0 {
        return None;
    }
    let end = rollout[rollout.len() - 1];
    let heading = normalize_angle((goal[1] - end.y).atan2(goal[0] - end.x) - end.yaw).abs();
    let cost = cfg.w_heading * heading + cfg.w_clearance / clearance + cfg.w_velocity * (cfg.v_max - u.v);
    Some(Candidate { action: u, cost, clearance })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DwaDecision {
    pub action: ControlAction,
    pub best: Option<Candidate>,
    pub feasible: usize,
}

/// `points` are obstacle hits and `goal` the target, both in the robot
/// frame. Returns stop when every rollout collides.
pub fn dwa_plan(points: &[Vec2], goal: Vec2, current: ControlAction, cfg: &DwaConfig) -> DwaDecision {
    let (vs, ws) = dwa_grid(current, cfg);
    let mut best: Option<Candidate> = None;
    let mut feasible = 0;
    for &v in &vs {
        for &w in &ws {
            let u = ControlAction::new(v, w);
            let Some(c) = score(&dwa_rollout(u, cfg), points, goal, u, cfg) else { continue };
            feasible += 1;
            if best.is_none_or(|b| candidate_order(&c, &b) == Ordering::Less) {
                best = Some(c);
            }
        }
    }
    DwaDecision {
        action: best.map_or_else(ControlAction::stop, |c| c.action),
        best,
        feasible,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_requested_shape_and_zero() {
        let (vs, ws) = dwa_grid(ControlAction::stop(), &DwaConfig::default());
        assert_eq!((vs.len(), ws.len()), (12, 40));
        assert!(ws.contains(&0.0));
        assert!((vs[11] - 1.0).abs() < 1e-12 && (vs[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn window_limits_the_grid() {
        let cfg = DwaConfig { acc_v: 1.0, acc_w: 1.0, ..DwaConfig::default() };
        let (vs, ws) = dwa_grid(ControlAction::new(0.5, 0.5), &cfg);
        assert!(vs.iter().all(|v| (0.4 - 1e-12..=0.6 + 1e-12).contains(v)));
        assert!(ws.iter().all(|w| (0.4 - 1e-12..=0.6 + 1e-12).contains(w)));
    }

    #[test]
    fn open_world_goes_full_speed_straight() {
        let d = dwa_plan(&[], [2.5, 0.0], ControlAction::stop(), &DwaConfig::default());
        assert_eq!(d.action, ControlAction::new(1.0, 0.0));
    }

    #[test]
    fn goal_to_the_left_turns_left() {
        let d = dwa_plan(&[], [0.0, 2.5], ControlAction::stop(), &DwaConfig::default());
        assert!(d.action.w > 0.0);
    }

    #[test]
    fn rollout_spacing_matches_granularity() {
        let cfg = DwaConfig::default();
        let r = dwa_rollout(ControlAction::new(1.0, 0.0), &cfg);
        assert_eq!(r.len(), 100);
        assert!((r[0].x - 0.02).abs() < 1e-12);
    }

    #[test]
    fn everything_blocked_gives_stop() {
        let ring: Vec<Vec2> = (0..360)
            .map(|i| {
                let a = i as f64 * std::f64::consts::PI / 180.0;
                [0.3 * a.cos(), 0.3 * a.sin()]
            })
            .collect();
        let d = dwa_plan(&ring, [2.5, 0.0], ControlAction::stop(), &DwaConfig::default());
        assert_eq!(d.action, ControlAction::stop());
        assert_eq!(d.feasible, 0);
    }
}
