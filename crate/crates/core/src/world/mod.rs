//! Geometry and kinematics shared by every stage: poses, plans, constant
//! velocity obstacle timelines and the disk clearance test.

mod env;

pub use env::{Arena, EnvSpec, MotionProfile, ObstacleScript, Segment, ENV_HEADER};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_HORIZON: usize = 50;
pub const DEFAULT_OBSTACLE_RADIUS: f64 = 0.165;
pub const DEFAULT_ROBOT_RADIUS: f64 = 0.267;

/// Tolerance of the plan kinematic-consistency check.
pub const KINEMATIC_TOL: f64 = 1e-6;

/// Wraps an angle to `(-π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[inline]
pub fn dist(a: Vec2, b: Vec2) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn origin() -> Self {
        Self::default()
    }

    pub fn position(&self) -> Vec2 {
        [self.x, self.y]
    }

    /// Maps a point given in this pose's frame to the parent frame.
    pub fn to_parent(&self, p: Vec2) -> Vec2 {
        let (s, c) = self.yaw.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    /// Maps a parent-frame point into this pose's frame.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// `other` expressed in this pose's frame.
    pub fn relative(&self, other: &Pose) -> Pose {
        let p = self.to_local(other.position());
        Pose::new(p[0], p[1], other.yaw - self.yaw)
    }

    /// Rotates a direction from this pose's frame to the parent frame.
    pub fn rotate_to_parent(&self, d: Vec2) -> Vec2 {
        let (s, c) = self.yaw.sin_cos();
        [c * d[0] - s * d[1], s * d[0] + c * d[1]]
    }

    pub fn rotate_to_local(&self, d: Vec2) -> Vec2 {
        let (s, c) = self.yaw.sin_cos();
        [c * d[0] + s * d[1], -s * d[0] + c * d[1]]
    }
}

/// Linear (m/s) and angular (rad/s) velocity command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlAction {
    pub v: f64,
    pub w: f64,
}

impl ControlAction {
    pub fn new(v: f64, w: f64) -> Self {
        Self { v, w }
    }

    pub fn stop() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotLimits {
    pub v_max: f64,
    pub w_max: f64,
}

impl Default for RobotLimits {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            w_max: 1.57,
        }
    }
}

impl RobotLimits {
    pub fn admits(&self, u: ControlAction) -> bool {
        u.v.abs() <= self.v_max + 1e-12 && u.w.abs() <= self.w_max + 1e-12
    }

    pub fn clamp(&self, u: ControlAction) -> ControlAction {
        ControlAction::new(
            u.v.clamp(-self.v_max, self.v_max),
            u.w.clamp(-self.w_max, self.w_max),
        )
    }
}

/// Unicycle Euler step: translate along the current heading, then turn.
pub fn step_diff_drive(pose: Pose, u: ControlAction, dt: f64) -> Pose {
    let (s, c) = pose.yaw.sin_cos();
    Pose::new(
        pose.x + u.v * c * dt,
        pose.y + u.v * s * dt,
        pose.yaw + u.w * dt,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub pose: Pose,
    pub action: ControlAction,
}

/// Timestamped poses and the controls that connect them, in the frame of the
/// first pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPlan {
    dt: f64,
    steps: Vec<PlanStep>,
}

impl MotionPlan {
    /// Validates the origin start and the kinematic consistency of every step.
    pub fn new(dt: f64, steps: Vec<PlanStep>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidPlan(format!("dt must be positive, got {dt}")));
        }
        if steps.len() < 2 {
            return Err(Error::InvalidPlan(format!(
                "need at least 2 steps, got {}",
                steps.len()
            )));
        }
        let p0 = steps[0].pose;
        if p0.x.abs() > KINEMATIC_TOL || p0.y.abs() > KINEMATIC_TOL || p0.yaw.abs() > KINEMATIC_TOL
        {
            return Err(Error::InvalidPlan(format!(
                "first pose must be the origin, got {p0:?}"
            )));
        }
        for (t, w) in steps.windows(2).enumerate() {
            let pred = step_diff_drive(w[0].pose, w[0].action, dt);
            let next = w[1].pose;
            let ex = (pred.x - next.x).abs().max((pred.y - next.y).abs());
            let ey = normalize_angle(pred.yaw - next.yaw).abs();
            if !(ex <= KINEMATIC_TOL && ey <= KINEMATIC_TOL) {
                return Err(Error::InvalidPlan(format!(
                    "step {t} is not kinematically consistent (position error {ex:e}, yaw error {ey:e})"
                )));
            }
        }
        if steps
            .iter()
            .any(|s| !(s.pose.x.is_finite() && s.pose.y.is_finite() && s.action.v.is_finite() && s.action.w.is_finite()))
        {
            return Err(Error::NonFinite("motion plan".into()));
        }
        Ok(Self { dt, steps })
    }

    /// Integrates `actions` from the origin. The plan has one step per action.
    pub fn from_actions(dt: f64, actions: &[ControlAction]) -> Result<Self> {
        let mut pose = Pose::origin();
        let mut steps = Vec::with_capacity(actions.len());
        for &u in actions {
            steps.push(PlanStep { pose, action: u });
            pose = step_diff_drive(pose, u, dt);
        }
        Self::new(dt, steps)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[PlanStep] {
        &self.steps
    }

    pub fn pose(&self, t: usize) -> Pose {
        self.steps[t].pose
    }

    pub fn action(&self, t: usize) -> ControlAction {
        self.steps[t].action
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.steps.iter().map(|s| s.pose.position()).collect()
    }

    pub fn goal(&self) -> Pose {
        self.steps[self.steps.len() - 1].pose
    }

    pub fn max_speed(&self) -> f64 {
        self.steps.iter().map(|s| s.action.v.abs()).fold(0.0, f64::max)
    }

    /// Point `ahead` metres further along the polyline from step `i`, or
    /// `None` when less than that remains.
    pub fn point_ahead(&self, i: usize, ahead: f64) -> Option<Vec2> {
        let mut remaining = ahead;
        for w in self.steps[i..].windows(2) {
            let a = w[0].pose.position();
            let b = w[1].pose.position();
            let seg = dist(a, b);
            if seg >= remaining && seg > 0.0 {
                let f = remaining / seg;
                return Some([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]);
            }
            remaining -= seg;
        }
        None
    }

    /// Unit vector, in the robot frame at step `i`, toward the point `ahead`
    /// metres along the plan. Falls back to the direction of the final pose
    /// (or its heading when the robot is already there).
    pub fn goal_direction(&self, i: usize, ahead: f64) -> Vec2 {
        let here = self.pose(i);
        let target = self.point_ahead(i, ahead).unwrap_or_else(|| self.goal().position());
        let local = here.to_local(target);
        let n = (local[0] * local[0] + local[1] * local[1]).sqrt();
        if n > 1e-9 {
            return [local[0] / n, local[1] / n];
        }
        let yaw = normalize_angle(self.goal().yaw - here.yaw);
        [yaw.cos(), yaw.sin()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub start: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
}

impl Obstacle {
    /// Centre after `t` steps of length `dt`.
    pub fn position(&self, t: usize, dt: f64) -> Vec2 {
        let tau = t as f64 * dt;
        [
            self.start[0] + self.velocity[0] * tau,
            self.start[1] + self.velocity[1] * tau,
        ]
    }

    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }
}

/// `N` circular obstacles with first-order (constant velocity) motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleTimeline {
    pub obstacles: Vec<Obstacle>,
    pub dt: f64,
}

impl ObstacleTimeline {
    pub fn new(obstacles: Vec<Obstacle>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidConfig(format!("timeline dt must be positive, got {dt}")));
        }
        if let Some(o) = obstacles.iter().find(|o| !(o.radius > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "obstacle radius must be positive, got {}",
                o.radius
            )));
        }
        Ok(Self { obstacles, dt })
    }

    pub fn empty(dt: f64) -> Self {
        Self {
            obstacles: Vec::new(),
            dt,
        }
    }

    pub fn len(&self) -> usize {
        self.obstacles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obstacles.is_empty()
    }

    pub fn obstacle_position(&self, i: usize, t: usize) -> Result<Vec2> {
        let o = self.obstacles.get(i).ok_or(Error::IndexOutOfRange {
            what: "obstacle",
            index: i,
            len: self.obstacles.len(),
        })?;
        Ok(o.position(t, self.dt))
    }

    /// Obstacle disks `(centre, radius)` at step `t`.
    pub fn disks_at(&self, t: usize) -> Vec<(Vec2, f64)> {
        self.obstacles
            .iter()
            .map(|o| (o.position(t, self.dt), o.radius))
            .collect()
    }
}

/// Minimum over steps and obstacles of the gap between the robot disk and the
/// obstacle disks. Negative means contact. `+inf` with no obstacles.
pub fn clearance_distance(
    plan: &MotionPlan,
    timeline: &ObstacleTimeline,
    robot_radius: f64,
) -> Result<f64> {
    if (plan.dt() - timeline.dt).abs() > 1e-12 {
        return Err(Error::HorizonMismatch(format!(
            "plan dt {} vs timeline dt {}",
            plan.dt(),
            timeline.dt
        )));
    }
    let mut best = f64::INFINITY;
    for (t, step) in plan.steps().iter().enumerate() {
        let c = step.pose.position();
        for o in &timeline.obstacles {
            let gap = dist(c, o.position(t, timeline.dt)) - o.radius - robot_radius;
            best = best.min(gap);
        }
    }
    Ok(best)
}
