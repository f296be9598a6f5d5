//! Fixed differentiable planner: reconstructs the plan that is optimal for a
//! set of moving obstacles, with every inner descent step recorded on the tape
//! so the result can be differentiated with respect to obstacle parameters.
//!
//! The objective over waypoints `x^0..x^{T-1}` is
//!
//! ```text
//! J = w_s Σ ‖x^{t+1} − 2x^t + x^{t−1}‖²
//!   + w_c Σ_t Σ_i max(c − ‖x^t − C_i^t‖, 0)²
//!   + w_e (‖x^0 − start‖² + ‖x^{T−1} − goal‖²)
//! ```
//!
//! with obstacle centres `C_i^t = S_i + V_i t dt` (time synchronised).

use std::hash::{DefaultHasher, Hasher};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, Tape};
use crate::error::{Error, Result};
use crate::world::{dist, MotionPlan, Pose, Vec2};

const DIST_EPS: f64 = 1e-12;
/// Peak lateral offset (m) of the initial waypoint guess.
const INITIAL_BOW: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub w_smooth: f64,
    pub w_collision: f64,
    pub w_endpoint: f64,
    pub clearance: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            step_size: 0.05,
            w_smooth: 1.0,
            w_collision: 10.0,
            w_endpoint: 10.0,
            clearance: 0.5,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.iterations >= 1
            && self.step_size > 0.0
            && self.w_smooth >= 0.0
            && self.w_collision >= 0.0
            && self.w_endpoint >= 0.0
            && self.clearance >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("decoder config {self:?}")))
        }
    }
}

/// Obstacle parameters living on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TapeObstacle {
    pub start: [Dual; 2],
    pub velocity: [Dual; 2],
}

impl TapeObstacle {
    pub fn constant(tape: &mut Tape, start: Vec2, velocity: Vec2) -> Self {
        Self {
            start: [tape.var(start[0]), tape.var(start[1])],
            velocity: [tape.var(velocity[0]), tape.var(velocity[1])],
        }
    }

    pub fn values(&self) -> (Vec2, Vec2) {
        (
            [self.start[0].value(), self.start[1].value()],
            [self.velocity[0].value(), self.velocity[1].value()],
        )
    }
}

/// Decoded positions plus velocities recovered by differencing.
#[derive(Debug, Clone)]
pub struct ReconstructedPlan {
    pub positions: Vec<[Dual; 2]>,
    /// `v^t = ‖x^{t+1} − x^t‖ / dt`, `t = 0..T−2`.
    pub v: Vec<Dual>,
    /// Heading change between consecutive displacements over `dt`, `t = 0..T−3`.
    pub w: Vec<Dual>,
    pub dt: f64,
}

impl ReconstructedPlan {
    pub fn from_positions(tape: &mut Tape, positions: Vec<[Dual; 2]>, dt: f64) -> Result<Self> {
        let n = positions.len();
        if n < 3 {
            return Err(Error::InvalidPlan(format!("need at least 3 waypoints, got {n}")));
        }
        let disp: Vec<[Dual; 2]> = positions
            .windows(2)
            .map(|p| [tape.sub(p[1][0], p[0][0]), tape.sub(p[1][1], p[0][1])])
            .collect();
        let mut v = Vec::with_capacity(n - 1);
        for d in &disp {
            let r2 = tape.dot(d, d);
            let r2 = tape.add_const(r2, DIST_EPS);
            let len = tape.sqrt(r2)?;
            v.push(tape.scale(len, 1.0 / dt));
        }
        let mut w = Vec::with_capacity(n - 2);
        for p in disp.windows(2) {
            let (a, b) = (p[0], p[1]);
            // sin and cos of the turn, scaled by |a||b|
            let p = tape.mul(a[0], b[1]);
            let q = tape.mul(a[1], b[0]);
            let cross = tape.sub(p, q);
            let dot = tape.dot(&a, &b);
            let turn = tape.atan2(cross, dot);
            w.push(tape.scale(turn, 1.0 / dt));
        }
        Ok(Self { positions, v, w, dt })
    }

    pub fn horizon(&self) -> usize {
        self.positions.len()
    }

    pub fn position_values(&self) -> Vec<Vec2> {
        self.positions.iter().map(|p| [p[0].value(), p[1].value()]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub plan: ReconstructedPlan,
    /// Objective at the returned waypoints, on the tape.
    pub objective: Dual,
    /// Objective value before the first and after every accepted inner step.
    pub trace: Vec<f64>,
    /// Inner step size after any halvings.
    pub final_step: f64,
    /// Hash of every branch taken (active hinge pairs, rejected steps). Equal
    /// signatures mean the decode is the same smooth piece.
    pub branch_signature: u64,
}

struct Terms {
    smooth: f64,
    collision: f64,
    endpoint: f64,
}

impl Terms {
    fn total(&self) -> f64 {
        self.smooth + self.collision + self.endpoint
    }
}

fn objective_terms(
    x: &[Vec2],
    obstacles: &[Vec<Vec2>],
    start: Vec2,
    goal: Vec2,
    cfg: &DecoderConfig,
) -> Terms {
    let t_max = x.len();
    let mut smooth = 0.0;
    for t in 1..t_max - 1 {
        for c in 0..2 {
            let a = x[t + 1][c] - 2.0 * x[t][c] + x[t - 1][c];
            smooth += a * a;
        }
    }
    let mut collision = 0.0;
    if cfg.w_collision > 0.0 {
        for track in obstacles {
            for (t, p) in x.iter().enumerate() {
                let dx = p[0] - track[t][0];
                let dy = p[1] - track[t][1];
                let d = (dx * dx + dy * dy + DIST_EPS).sqrt();
                let h = cfg.clearance - d;
                if h > 0.0 {
                    collision += h * h;
                }
            }
        }
    }
    let sq = |a: Vec2, b: Vec2| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    Terms {
        smooth: cfg.w_smooth * smooth,
        collision: cfg.w_collision * collision,
        endpoint: cfg.w_endpoint * (sq(x[0], start) + sq(x[t_max - 1], goal)),
    }
}

/// Smoothness, collision and endpoint terms of the objective at plain
/// waypoint values; used by tests and diagnostics.
pub fn objective_breakdown(
    x: &[Vec2],
    obstacles: &[(Vec2, Vec2)],
    start: Vec2,
    goal: Vec2,
    dt: f64,
    cfg: &DecoderConfig,
) -> (f64, f64, f64) {
    let tracks = obstacle_tracks_f64(obstacles, x.len(), dt);
    let t = objective_terms(x, &tracks, start, goal, cfg);
    (t.smooth, t.collision, t.endpoint)
}

fn obstacle_tracks_f64(obstacles: &[(Vec2, Vec2)], horizon: usize, dt: f64) -> Vec<Vec<Vec2>> {
    obstacles
        .iter()
        .map(|(s, v)| {
            (0..horizon)
                .map(|t| {
                    let tau = t as f64 * dt;
                    [s[0] + v[0] * tau, s[1] + v[1] * tau]
                })
                .collect()
        })
        .collect()
}

/// Collision pair `(x − o) · h / d` for waypoint-obstacle pairs inside the
/// clearance, or `None` when the hinge is inactive (zero contribution).
fn hinge_pair(
    tape: &mut Tape,
    x: [Dual; 2],
    o: [Dual; 2],
    clearance: f64,
) -> Result<Option<([Dual; 2], Dual)>> {
    let dxv = x[0].value() - o[0].value();
    let dyv = x[1].value() - o[1].value();
    if clearance - (dxv * dxv + dyv * dyv + DIST_EPS).sqrt() <= 0.0 {
        return Ok(None);
    }
    let dx = tape.sub(x[0], o[0]);
    let dy = tape.sub(x[1], o[1]);
    let r2 = tape.dot(&[dx, dy], &[dx, dy]);
    let r2 = tape.add_const(r2, DIST_EPS);
    let d = tape.sqrt(r2)?;
    let h = tape.linear(&[d], &[-1.0], clearance);
    let h = tape.max0(h);
    let q = tape.div(h, d);
    Ok(Some(([tape.mul(q, dx), tape.mul(q, dy)], h)))
}

/// Runs the unrolled descent from the straight start→goal line.
pub fn decode(
    tape: &mut Tape,
    obstacles: &[TapeObstacle],
    start: &Pose,
    goal: &Pose,
    horizon: usize,
    dt: f64,
    cfg: &DecoderConfig,
) -> Result<Decoded> {
    cfg.validate()?;
    if horizon < 3 {
        return Err(Error::InvalidConfig(format!("decoder horizon {horizon} < 3")));
    }
    let s = start.position();
    let g = goal.position();
    let last = horizon - 1;

    // obstacle centres per step, recorded once
    let tracks: Vec<Vec<[Dual; 2]>> = obstacles
        .iter()
        .map(|o| {
            (0..horizon)
                .map(|t| {
                    let tau = t as f64 * dt;
                    [
                        tape.linear(&[o.start[0], o.velocity[0]], &[1.0, tau], 0.0),
                        tape.linear(&[o.start[1], o.velocity[1]], &[1.0, tau], 0.0),
                    ]
                })
                .collect()
        })
        .collect();
    let tracks_f64: Vec<Vec<Vec2>> = tracks
        .iter()
        .map(|tr| tr.iter().map(|p| [p[0].value(), p[1].value()]).collect())
        .collect();

    // straight line with a slight bow to the left, so an obstacle centred
    // exactly on the line is not a saddle the descent cannot leave
    let len = dist(s, g);
    let n = if len > 1e-9 { [-(g[1] - s[1]) / len, (g[0] - s[0]) / len] } else { [0.0, 0.0] };
    let mut x: Vec<[Dual; 2]> = (0..horizon)
        .map(|t| {
            let f = t as f64 / last as f64;
            let b = INITIAL_BOW * (std::f64::consts::PI * f).sin();
            [
                tape.constant(s[0] + f * (g[0] - s[0]) + b * n[0]),
                tape.constant(s[1] + f * (g[1] - s[1]) + b * n[1]),
            ]
        })
        .collect();
    let values = |x: &[[Dual; 2]]| -> Vec<Vec2> { x.iter().map(|p| [p[0].value(), p[1].value()]).collect() };

    let mut j_prev = objective_terms(&values(&x), &tracks_f64, s, g, cfg).total();
    if !j_prev.is_finite() {
        return Err(Error::DecoderDivergence { iteration: 0 });
    }
    let mut trace = vec![j_prev];
    let mut eta = cfg.step_size;
    let mut parents: Vec<Dual> = Vec::new();
    let mut coeffs: Vec<f64> = Vec::new();
    let mut branches = DefaultHasher::new();

    'outer: for iter in 0..cfg.iterations {
        // second differences a^t, t = 1..T-2
        let mut a: Vec<Option<[Dual; 2]>> = vec![None; horizon];
        if cfg.w_smooth > 0.0 {
            for t in 1..last {
                a[t] = Some([
                    tape.linear(&[x[t + 1][0], x[t][0], x[t - 1][0]], &[1.0, -2.0, 1.0], 0.0),
                    tape.linear(&[x[t + 1][1], x[t][1], x[t - 1][1]], &[1.0, -2.0, 1.0], 0.0),
                ]);
            }
        }
        let mut pushes: Vec<Vec<[Dual; 2]>> = vec![Vec::new(); horizon];
        branches.write_usize(iter);
        if cfg.w_collision > 0.0 {
            for tr in &tracks {
                branches.write_u8(0xff);
                for t in 0..horizon {
                    if let Some((q, _)) = hinge_pair(tape, x[t], tr[t], cfg.clearance)? {
                        pushes[t].push(q);
                        branches.write_usize(t);
                    }
                }
            }
        }

        loop {
            let mut next = Vec::with_capacity(horizon);
            for t in 0..horizon {
                let mut p = [x[t][0]; 2];
                for c in 0..2 {
                    parents.clear();
                    coeffs.clear();
                    let mut self_coeff = 1.0;
                    let mut bias = 0.0;
                    if t == 0 {
                        self_coeff -= 2.0 * eta * cfg.w_endpoint;
                        bias += 2.0 * eta * cfg.w_endpoint * s[c];
                    }
                    if t == last {
                        self_coeff -= 2.0 * eta * cfg.w_endpoint;
                        bias += 2.0 * eta * cfg.w_endpoint * g[c];
                    }
                    parents.push(x[t][c]);
                    coeffs.push(self_coeff);
                    for (j, m) in [(t.wrapping_sub(1), 1.0), (t, -2.0), (t + 1, 1.0)] {
                        if let Some(Some(aj)) = a.get(j) {
                            parents.push(aj[c]);
                            coeffs.push(-2.0 * eta * cfg.w_smooth * m);
                        }
                    }
                    for q in &pushes[t] {
                        parents.push(q[c]);
                        coeffs.push(2.0 * eta * cfg.w_collision);
                    }
                    p[c] = tape.linear(&parents, &coeffs, bias);
                }
                next.push(p);
            }
            let j_new = objective_terms(&values(&next), &tracks_f64, s, g, cfg).total();
            if !j_new.is_finite() {
                return Err(Error::DecoderDivergence { iteration: iter + 1 });
            }
            if j_new <= j_prev {
                x = next;
                j_prev = j_new;
                trace.push(j_new);
                break;
            }
            eta *= 0.5;
            branches.write_usize(usize::MAX - iter);
            if eta < cfg.step_size * 1e-6 {
                break 'outer;
            }
        }
    }

    let objective = objective_on_tape(tape, &x, &tracks, s, g, cfg)?;
    let plan = ReconstructedPlan::from_positions(tape, x, dt)?;
    Ok(Decoded {
        plan,
        objective,
        trace,
        final_step: eta,
        branch_signature: branches.finish(),
    })
}

fn objective_on_tape(
    tape: &mut Tape,
    x: &[[Dual; 2]],
    tracks: &[Vec<[Dual; 2]>],
    s: Vec2,
    g: Vec2,
    cfg: &DecoderConfig,
) -> Result<Dual> {
    let last = x.len() - 1;
    let mut terms = Vec::new();
    let mut weights = Vec::new();
    for t in 1..last {
        for c in 0..2 {
            let a = tape.linear(&[x[t + 1][c], x[t][c], x[t - 1][c]], &[1.0, -2.0, 1.0], 0.0);
            terms.push(tape.square(a));
            weights.push(cfg.w_smooth);
        }
    }
    if cfg.w_collision > 0.0 {
        for tr in tracks {
            for t in 0..x.len() {
                if let Some((_, h)) = hinge_pair(tape, x[t], tr[t], cfg.clearance)? {
                    terms.push(tape.square(h));
                    weights.push(cfg.w_collision);
                }
            }
        }
    }
    for (t, target) in [(0, s), (last, g)] {
        for c in 0..2 {
            let e = tape.add_const(x[t][c], -target[c]);
            terms.push(tape.square(e));
            weights.push(cfg.w_endpoint);
        }
    }
    Ok(tape.linear(&terms, &weights, 0.0))
}

/// Channel-mean squared error over positions, linear and angular velocity.
pub fn reconstruction_loss(tape: &mut Tape, plan: &MotionPlan, p_hat: &ReconstructedPlan) -> Result<Dual> {
    let n = plan.len();
    if p_hat.horizon() != n || (p_hat.dt - plan.dt()).abs() > 1e-12 {
        return Err(Error::HorizonMismatch(format!(
            "plan has {n} steps at dt {}, reconstruction {} at dt {}",
            plan.dt(),
            p_hat.horizon(),
            p_hat.dt
        )));
    }
    let mut channel = |pairs: Vec<(Dual, f64)>| -> Dual {
        let m = pairs.len() as f64;
        let sq: Vec<Dual> = pairs
            .into_iter()
            .map(|(d, target)| {
                let e = tape.add_const(d, -target);
                tape.square(e)
            })
            .collect();
        let c = vec![1.0 / m; sq.len()];
        tape.linear(&sq, &c, 0.0)
    };
    let steps = plan.steps();
    let ex = channel((0..n).map(|t| (p_hat.positions[t][0], steps[t].pose.x)).collect());
    let ey = channel((0..n).map(|t| (p_hat.positions[t][1], steps[t].pose.y)).collect());
    let ev = channel((0..n - 1).map(|t| (p_hat.v[t], steps[t].action.v)).collect());
    let ew = channel((0..n - 2).map(|t| (p_hat.w[t], steps[t].action.w)).collect());
    Ok(tape.linear(&[ex, ey, ev, ew], &[0.25; 4], 0.0))
}
