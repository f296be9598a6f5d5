//! Deployment loop around a trained planner: history buffering, goal
//! lookahead on the global path, and a rollout collision check over
//! extrapolated scans with stop-and-reverse recovery.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lidar::{assemble_history, LidarScan, ScanHistory};
use crate::planner::{planner_forward, PlannerWeights};
use crate::world::{step_diff_drive, ControlAction, Pose, Vec2, DEFAULT_DT, DEFAULT_ROBOT_RADIUS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyConfig {
    /// Rollout length in control steps.
    pub horizon: usize,
    pub collision_radius: f64,
    /// Negative linear speed used while a collision stays predicted.
    pub reverse_speed: f64,
    pub enabled: bool,
    /// Nearest-neighbour gate for scan flow.
    pub match_radius: f64,
    pub dt: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            collision_radius: DEFAULT_ROBOT_RADIUS + 0.05,
            reverse_speed: -0.15,
            enabled: true,
            match_radius: 0.3,
            dt: DEFAULT_DT,
        }
    }
}

impl SafetyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("safety horizon must be at least 1".into()));
        }
        if !(self.reverse_speed >= -0.2 && self.reverse_speed < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "reverse speed must lie in [-0.2, 0), got {}",
                self.reverse_speed
            )));
        }
        if !(self.collision_radius > 0.0 && self.match_radius > 0.0 && self.dt > 0.0) {
            return Err(Error::InvalidConfig("safety radii and dt must be positive".into()));
        }
        Ok(())
    }
}

/// Uniform grid over points for radius queries.
struct PointGrid<'a> {
    cell: f64,
    points: &'a [Vec2],
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a> PointGrid<'a> {
    fn new(points: &'a [Vec2], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, points, cells }
    }

    fn key(p: &Vec2, cell: f64) -> (i64, i64) {
        ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)
    }

    /// Nearest point within `radius` (`radius <= cell`), lowest index on ties.
    fn nearest(&self, q: Vec2, radius: f64) -> Option<usize> {
        let (cx, cy) = Self::key(&q, self.cell);
        let mut best: Option<(f64, usize)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(ids) = self.cells.get(&(cx + dx, cy + dy)) else { continue };
                for &i in ids {
                    let p = self.points[i];
                    let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                    if d2 <= radius * radius && best.is_none_or(|(b, j)| d2 < b || (d2 == b && i < j)) {
                        best = Some((d2, i));
                    }
                }
            }
        }
        best.map(|(_, i)| i)
    }
}

/// Hit points of `now` with per-step displacements estimated by matching
/// each to its nearest point of `prev` (unmatched points are static).
pub fn scan_flow(prev: &LidarScan, now: &LidarScan, match_radius: f64) -> Vec<(Vec2, Vec2)> {
    let before = prev.points();
    let grid = PointGrid::new(&before, match_radius);
    now.points()
        .into_iter()
        .map(|p| match grid.nearest(p, match_radius) {
            Some(j) => (p, [p[0] - before[j][0], p[1] - before[j][1]]),
            None => (p, [0.0, 0.0]),
        })
        .collect()
}

fn advect(flow: &[(Vec2, Vec2)], k: usize) -> Vec<Vec2> {
    let k = k as f64;
    flow.iter().map(|(p, d)| [p[0] + k * d[0], p[1] + k * d[1]]).collect()
}

/// Predicted scans for steps `1..=steps`, both inputs in the current robot
/// frame and one control step apart.
pub fn extrapolate_scans(prev: &LidarScan, now: &LidarScan, steps: usize, match_radius: f64) -> Vec<LidarScan> {
    let flow = scan_flow(prev, now, match_radius);
    (1..=steps)
        .map(|k| LidarScan::from_points(&advect(&flow, k), now.params))
        .collect()
}

/// Holds `u` for `horizon` steps from the current pose and tests every
/// rollout pose against the advected scan points of the same step.
pub fn predicts_collision(u: ControlAction, prev: &LidarScan, now: &LidarScan, cfg: &SafetyConfig) -> bool {
    let flow = scan_flow(prev, now, cfg.match_radius);
    if flow.is_empty() {
        return false;
    }
    let r2 = cfg.collision_radius * cfg.collision_radius;
    let mut pose = Pose::origin();
    for k in 0..=cfg.horizon {
        let c = pose.position();
        let hit = flow.iter().any(|(p, d)| {
            let q = [p[0] + k as f64 * d[0], p[1] + k as f64 * d[1]];
            (q[0] - c[0]).powi(2) + (q[1] - c[1]).powi(2) < r2
        });
        if hit {
            return true;
        }
        pose = step_diff_drive(pose, u, cfg.dt);
    }
    false
}

/// Stop on the first cycle a collision is predicted, then reverse slowly for
/// as long as it stays predicted.
#[derive(Debug, Clone, Default)]
pub struct SafetyGate {
    blocked: bool,
}

impl SafetyGate {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_blocked(&self) -> bool {
        self.blocked
    }

    pub fn gate(&mut self, u: ControlAction, prev: &LidarScan, now: &LidarScan, cfg: &SafetyConfig) -> ControlAction {
        if !cfg.enabled || !predicts_collision(u, prev, now, cfg) {
            self.blocked = false;
            return u;
        }
        if self.blocked {
            ControlAction::new(cfg.reverse_speed, 0.0)
        } else {
            self.blocked = true;
            ControlAction::stop()
        }
    }
}

/// Previous scan re-expressed in the current robot frame, alongside the
/// current scan.
pub fn frame_pair(prev_pose: &Pose, prev: &LidarScan, pose: &Pose, now: &LidarScan) -> Result<(LidarScan, LidarScan)> {
    let h = assemble_history(&[*prev_pose, *pose], &[prev.clone(), now.clone()])?;
    let mut it = h.scans.into_iter();
    Ok((it.next().unwrap_or_else(|| now.clone()), now.clone()))
}

/// Gate plus the one-scan memory it needs, for planners that are not
/// driven through [`Controller`].
#[derive(Debug, Clone)]
pub struct SafetyMonitor {
    pub cfg: SafetyConfig,
    gate: SafetyGate,
    last: Option<(Pose, LidarScan)>,
}

impl SafetyMonitor {
    pub fn new(cfg: SafetyConfig) -> Self {
        Self { cfg, gate: SafetyGate::new(), last: None }
    }

    pub fn apply(&mut self, pose: Pose, scan: &LidarScan, u: ControlAction) -> Result<ControlAction> {
        let (prev, now) = match &self.last {
            Some((p, s)) => frame_pair(p, s, &pose, scan)?,
            None => (scan.clone(), scan.clone()),
        };
        self.last = Some((pose, scan.clone()));
        if !self.cfg.enabled {
            return Ok(u);
        }
        Ok(self.gate.gate(u, &prev, &now, &self.cfg))
    }
}

/// Unit vector in the robot frame toward the point `ahead` metres past the
/// projection of the robot onto the segment `start → goal`.
pub fn lookahead_goal(pose: &Pose, start: Vec2, goal: Vec2, ahead: f64) -> Vec2 {
    let d = [goal[0] - start[0], goal[1] - start[1]];
    let len = d[0].hypot(d[1]);
    let target = if len < 1e-9 {
        goal
    } else {
        let u = [d[0] / len, d[1] / len];
        let s = ((pose.x - start[0]) * u[0] + (pose.y - start[1]) * u[1]).clamp(0.0, len);
        let s = (s + ahead).min(len);
        [start[0] + s * u[0], start[1] + s * u[1]]
    };
    let local = pose.to_local(target);
    let n = local[0].hypot(local[1]);
    if n > 1e-9 {
        [local[0] / n, local[1] / n]
    } else {
        [1.0, 0.0]
    }
}

/// Per-run state of a learned planner in the loop.
#[derive(Debug, Clone)]
pub struct Controller {
    pub weights: PlannerWeights,
    pub safety: SafetyConfig,
    pub goal_ahead: f64,
    buffer: VecDeque<(Pose, LidarScan)>,
    gate: SafetyGate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub raw: ControlAction,
    pub action: ControlAction,
}

impl Controller {
    pub fn new(weights: PlannerWeights, safety: SafetyConfig) -> Result<Self> {
        safety.validate()?;
        Ok(Self {
            weights,
            safety,
            goal_ahead: 2.5,
            buffer: VecDeque::new(),
            gate: SafetyGate::new(),
        })
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
        self.gate = SafetyGate::new();
    }

    /// Current history, padded at the front by repeating the oldest entry.
    pub fn history(&self) -> Result<ScanHistory> {
        let l = self.weights.arch.history;
        let first = self.buffer.front().ok_or(Error::Empty("scan buffer"))?;
        let pad = l.saturating_sub(self.buffer.len());
        let items: Vec<&(Pose, LidarScan)> = std::iter::repeat_n(first, pad)
            .chain(self.buffer.iter().skip(self.buffer.len().saturating_sub(l)))
            .collect();
        let poses: Vec<Pose> = items.iter().map(|(p, _)| *p).collect();
        let scans: Vec<LidarScan> = items.iter().map(|(_, s)| s.clone()).collect();
        assemble_history(&poses, &scans)
    }

    /// Pushes the new observation (world-frame pose, raw scan) and returns
    /// the planner action before and after the safety gate.
    /// Scans are resampled to the planner's beam count.
    pub fn control_step(&mut self, pose: Pose, scan: LidarScan, start: Vec2, goal: Vec2) -> Result<ControlOutput> {
        let scan = scan.resample(self.weights.arch.beams);
        self.buffer.push_back((pose, scan));
        let keep = self.weights.arch.history.max(2);
        while self.buffer.len() > keep {
            self.buffer.pop_front();
        }
        let history = self.history()?;
        let g = lookahead_goal(&pose, start, goal, self.goal_ahead);
        let raw = planner_forward(&history, g, &self.weights)?;
        if !self.safety.enabled {
            return Ok(ControlOutput { raw, action: raw });
        }
        let n = self.buffer.len();
        let (prev, now) = if n >= 2 {
            let (a, b) = (&self.buffer[n - 2], &self.buffer[n - 1]);
            frame_pair(&a.0, &a.1, &b.0, &b.1)?
        } else {
            let s = self.buffer[n - 1].1.clone();
            (s.clone(), s)
        };
        let action = self.gate.gate(raw, &prev, &now, &self.safety);
        Ok(ControlOutput { raw, action })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lidar::{cast_scan, LidarParams};
    use crate::world::Segment;

    fn disk_scan(c: Vec2) -> LidarScan {
        cast_scan(&Pose::origin(), &[(c, 0.3)], &[], &LidarParams::default())
    }

    #[test]
    fn static_world_extrapolates_to_itself() {
        let s = disk_scan([2.0, 0.5]);
        for p in extrapolate_scans(&s, &s, 10, 0.3) {
            for (a, b) in p.ranges.iter().zip(&s.ranges) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn empty_scans_give_empty_predictions() {
        let s = LidarScan::empty(LidarParams::default());
        let p = extrapolate_scans(&s, &s, 4, 0.3);
        assert_eq!(p.len(), 4);
        assert!(p.iter().all(|x| x.points().is_empty()));
    }

    #[test]
    fn moving_disk_is_advected() {
        let prev = disk_scan([3.0, 0.0]);
        let now = disk_scan([2.95, 0.0]);
        let pred = extrapolate_scans(&prev, &now, 10, 0.3);
        for (k, s) in pred.iter().enumerate() {
            let k = (k + 1) as f64;
            let truth = disk_scan([2.95 - 0.05 * k, 0.0]);
            // the forward beam sees the near surface of the disk
            assert!((s.ranges[360] - truth.ranges[360]).abs() < 0.02, "step {k}");
        }
    }

    #[test]
    fn wall_ahead_stops_full_forward() {
        let wall = Segment { a: [0.3, -3.0], b: [0.3, 3.0] };
        let s = cast_scan(&Pose::origin(), &[], &[wall], &LidarParams::default());
        let cfg = SafetyConfig::default();
        let mut g = SafetyGate::new();
        let u = ControlAction::new(1.0, 0.0);
        assert_eq!(g.gate(u, &s, &s, &cfg), ControlAction::stop());
        assert_eq!(g.gate(u, &s, &s, &cfg), ControlAction::new(cfg.reverse_speed, 0.0));
    }

    #[test]
    fn empty_world_passes_and_gate_is_idempotent() {
        let s = LidarScan::empty(LidarParams::default());
        let cfg = SafetyConfig::default();
        let mut g = SafetyGate::new();
        let u = ControlAction::new(0.7, 0.3);
        let once = g.gate(u, &s, &s, &cfg);
        assert_eq!(once, u);
        assert_eq!(g.gate(once, &s, &s, &cfg), once);
    }

    #[test]
    fn receding_obstacle_passes() {
        let prev = disk_scan([1.2, 0.0]);
        let now = disk_scan([1.4, 0.0]);
        let cfg = SafetyConfig::default();
        let u = ControlAction::new(1.0, 0.0);
        assert!(!predicts_collision(u, &prev, &now, &cfg));
        let approaching = disk_scan([1.0, 0.0]);
        assert!(predicts_collision(u, &prev, &approaching, &cfg));
    }

    #[test]
    fn lookahead_clamps_to_goal() {
        let g = lookahead_goal(&Pose::new(0.0, 1.0, 0.0), [0.0, 0.0], [10.0, 0.0], 2.5);
        assert!((g[0] - 2.5 / (2.5f64.powi(2) + 1.0).sqrt()).abs() < 1e-12);
        let g = lookahead_goal(&Pose::new(9.5, 0.0, std::f64::consts::FRAC_PI_2), [0.0, 0.0], [10.0, 0.0], 2.5);
        assert!((g[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_bounds() {
        let mut c = SafetyConfig::default();
        assert!(c.validate().is_ok());
        c.reverse_speed = -0.3;
        assert!(c.validate().is_err());
        c.reverse_speed = 0.0;
        assert!(c.validate().is_err());
    }
}
