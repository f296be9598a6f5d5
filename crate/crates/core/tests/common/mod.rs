#![allow(dead_code)]

use hallunav::autodiff::{Dual, Tape};
use hallunav::bench::dwa::{dwa_grid, DwaConfig};
use hallunav::world::{normalize_angle, ControlAction, Pose, Segment, Vec2};
use rand::Rng;

/// Random composite expression over `n` variables.
#[derive(Debug, Clone)]
pub enum Expr {
    Var(usize),
    Const(f64),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    /// a / (b² + 0.5)
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    /// exp(tanh(a))
    Exp(Box<Expr>),
    /// ln(a² + 1)
    Ln(Box<Expr>),
    /// sqrt(a² + 0.25)
    Sqrt(Box<Expr>),
    Tanh(Box<Expr>),
    Relu(Box<Expr>),
    Max0(Box<Expr>),
    Square(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Atan2(Box<Expr>, Box<Expr>),
    Select(Box<Expr>, Box<Expr>, Box<Expr>),
    Sum(Vec<Expr>),
    Dot(Vec<Expr>, Vec<Expr>),
    Linear(Vec<Expr>, Vec<f64>, f64),
}

pub fn random_expr<R: Rng>(rng: &mut R, vars: usize, depth: usize) -> Expr {
    use Expr::*;
    if depth == 0 || rng.random_bool(0.15) {
        return if rng.random_bool(0.8) {
            Var(rng.random_range(0..vars))
        } else {
            Const(rng.random_range(-2.0..2.0))
        };
    }
    let sub = |rng: &mut R| Box::new(random_expr(rng, vars, depth - 1));
    match rng.random_range(0..20) {
        0 => Add(sub(rng), sub(rng)),
        1 => Sub(sub(rng), sub(rng)),
        2 => Mul(sub(rng), sub(rng)),
        3 => Div(sub(rng), sub(rng)),
        4 => Neg(sub(rng)),
        5 => Exp(sub(rng)),
        6 => Ln(sub(rng)),
        7 => Sqrt(sub(rng)),
        8 => Tanh(sub(rng)),
        9 => Relu(sub(rng)),
        10 => Max0(sub(rng)),
        11 => Square(sub(rng)),
        12 => Sin(sub(rng)),
        13 => Cos(sub(rng)),
        14 => Atan2(sub(rng), sub(rng)),
        15 => Select(sub(rng), sub(rng), sub(rng)),
        16 => Sum((0..rng.random_range(1..4)).map(|_| *sub(rng)).collect()),
        17 => {
            let n = rng.random_range(1..4);
            let a = (0..n).map(|_| *sub(rng)).collect();
            let b = (0..n).map(|_| *sub(rng)).collect();
            Dot(a, b)
        }
        _ => {
            let n = rng.random_range(1..4);
            let xs = (0..n).map(|_| *sub(rng)).collect();
            let cs = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            Linear(xs, cs, rng.random_range(-1.0..1.0))
        }
    }
}

/// Plain floating-point evaluation. `kink` tracks the smallest distance of any
/// non-smooth operation's argument from its switching point.
pub fn eval(e: &Expr, x: &[f64], kink: &mut f64) -> f64 {
    use Expr::*;
    match e {
        Var(i) => x[*i],
        Const(c) => *c,
        Add(a, b) => eval(a, x, kink) + eval(b, x, kink),
        Sub(a, b) => eval(a, x, kink) - eval(b, x, kink),
        Mul(a, b) => eval(a, x, kink) * eval(b, x, kink),
        Div(a, b) => {
            let d = eval(b, x, kink);
            eval(a, x, kink) / (d * d + 0.5)
        }
        Neg(a) => -eval(a, x, kink),
        Exp(a) => eval(a, x, kink).tanh().exp(),
        Ln(a) => {
            let v = eval(a, x, kink);
            (v * v + 1.0).ln()
        }
        Sqrt(a) => {
            let v = eval(a, x, kink);
            (v * v + 0.25).sqrt()
        }
        Tanh(a) => eval(a, x, kink).tanh(),
        Relu(a) | Max0(a) => {
            let v = eval(a, x, kink);
            *kink = kink.min(v.abs());
            v.max(0.0)
        }
        Square(a) => eval(a, x, kink).powi(2),
        Sin(a) => eval(a, x, kink).sin(),
        Cos(a) => eval(a, x, kink).cos(),
        Atan2(a, b) => {
            let (y, xx) = (eval(a, x, kink), eval(b, x, kink));
            *kink = kink.min(y.hypot(xx));
            // branch cut on the negative x axis
            if xx < 0.0 {
                *kink = kink.min(y.abs());
            }
            y.atan2(xx)
        }
        Select(c, a, b) => {
            let cv = eval(c, x, kink);
            *kink = kink.min(cv.abs());
            let (av, bv) = (eval(a, x, kink), eval(b, x, kink));
            if cv > 0.0 {
                av
            } else {
                bv
            }
        }
        Sum(xs) => xs.iter().map(|e| eval(e, x, kink)).sum(),
        Dot(a, b) => a.iter().zip(b).map(|(p, q)| eval(p, x, kink) * eval(q, x, kink)).sum(),
        Linear(xs, cs, bias) => bias + xs.iter().zip(cs).map(|(e, c)| c * eval(e, x, kink)).sum::<f64>(),
    }
}

pub fn record(e: &Expr, t: &mut Tape, vars: &[Dual]) -> Dual {
    use Expr::*;
    match e {
        Var(i) => vars[*i],
        Const(c) => t.constant(*c),
        Add(a, b) => {
            let (a, b) = (record(a, t, vars), record(b, t, vars));
            t.add(a, b)
        }
        Sub(a, b) => {
            let (a, b) = (record(a, t, vars), record(b, t, vars));
            t.sub(a, b)
        }
        Mul(a, b) => {
            let (a, b) = (record(a, t, vars), record(b, t, vars));
            t.mul(a, b)
        }
        Div(a, b) => {
            let a = record(a, t, vars);
            let b = record(b, t, vars);
            let b2 = t.square(b);
            let d = t.add_const(b2, 0.5);
            t.div(a, d)
        }
        Neg(a) => {
            let a = record(a, t, vars);
            t.neg(a)
        }
        Exp(a) => {
            let a = record(a, t, vars);
            let h = t.tanh(a);
            t.exp(h)
        }
        Ln(a) => {
            let a = record(a, t, vars);
            let s = t.square(a);
            let s = t.add_const(s, 1.0);
            t.ln(s).unwrap()
        }
        Sqrt(a) => {
            let a = record(a, t, vars);
            let s = t.square(a);
            let s = t.add_const(s, 0.25);
            t.sqrt(s).unwrap()
        }
        Tanh(a) => {
            let a = record(a, t, vars);
            t.tanh(a)
        }
        Relu(a) => {
            let a = record(a, t, vars);
            t.relu(a)
        }
        Max0(a) => {
            let a = record(a, t, vars);
            t.max0(a)
        }
        Square(a) => {
            let a = record(a, t, vars);
            t.square(a)
        }
        Sin(a) => {
            let a = record(a, t, vars);
            t.sin(a)
        }
        Cos(a) => {
            let a = record(a, t, vars);
            t.cos(a)
        }
        Atan2(a, b) => {
            let (a, b) = (record(a, t, vars), record(b, t, vars));
            t.atan2(a, b)
        }
        Select(c, a, b) => {
            let c = record(c, t, vars);
            let a = record(a, t, vars);
            let b = record(b, t, vars);
            t.select(c, a, b)
        }
        Sum(xs) => {
            let ds: Vec<Dual> = xs.iter().map(|e| record(e, t, vars)).collect();
            t.sum(&ds)
        }
        Dot(a, b) => {
            let da: Vec<Dual> = a.iter().map(|e| record(e, t, vars)).collect();
            let db: Vec<Dual> = b.iter().map(|e| record(e, t, vars)).collect();
            t.dot(&da, &db)
        }
        Linear(xs, cs, bias) => {
            let ds: Vec<Dual> = xs.iter().map(|e| record(e, t, vars)).collect();
            t.linear(&ds, cs, *bias)
        }
    }
}

/// Worst relative error of the tape gradient against central differences,
/// or `None` when the point sits within `margin` of a kink or the value is
/// too large to difference reliably.
pub fn gradient_check(e: &Expr, x: &[f64], margin: f64) -> Option<f64> {
    let mut kink = f64::INFINITY;
    let f0 = eval(e, x, &mut kink);
    if kink < margin || !f0.is_finite() || f0.abs() > 1e6 {
        return None;
    }
    let mut t = Tape::new();
    let vars: Vec<Dual> = x.iter().map(|&v| t.var(v)).collect();
    let out = record(e, &mut t, &vars);
    assert!((out.value() - f0).abs() <= 1e-12 * f0.abs().max(1.0), "{} vs {f0}", out.value());
    let g = t.backward(out).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut xp = x.to_vec();
        xp[i] += h;
        let mut k = f64::INFINITY;
        let up = eval(e, &xp, &mut k);
        xp[i] -= 2.0 * h;
        let down = eval(e, &xp, &mut k);
        if k < 0.5 * margin {
            return None;
        }
        let fd = (up - down) / (2.0 * h);
        let an = g.wrt(vars[i]);
        let scale = an.abs().max(fd.abs()).max(1e-3);
        worst = worst.max((an - fd).abs() / scale);
    }
    Some(worst)
}

/// Reference ray caster: steps along each beam by the distance to the nearest
/// primitive, never less than `step`, until inside a disk or across a wall.
pub fn march_range(o: Vec2, d: Vec2, disks: &[(Vec2, f64)], walls: &[Segment], max_range: f64, step: f64) -> f64 {
    let side = |w: &Segment, p: Vec2| (w.b[0] - w.a[0]) * (p[1] - w.a[1]) - (w.b[1] - w.a[1]) * (p[0] - w.a[0]);
    let seg_dist = |w: &Segment, p: Vec2| {
        let e = [w.b[0] - w.a[0], w.b[1] - w.a[1]];
        let u = (((p[0] - w.a[0]) * e[0] + (p[1] - w.a[1]) * e[1]) / (e[0] * e[0] + e[1] * e[1])).clamp(0.0, 1.0);
        (p[0] - w.a[0] - u * e[0]).hypot(p[1] - w.a[1] - u * e[1])
    };
    let mut s = 0.0;
    let mut prev = o;
    loop {
        let p = [o[0] + s * d[0], o[1] + s * d[1]];
        if s > 0.0 {
            for &(c, r) in disks {
                if r > 0.0 && (p[0] - c[0]).hypot(p[1] - c[1]) <= r {
                    return s.min(max_range);
                }
            }
            for w in walls {
                let (sa, sb) = (side(w, prev), side(w, p));
                if sa * sb <= 0.0 && sa != sb {
                    // crossing point of this step with the wall's line
                    let f = sa / (sa - sb);
                    let q = [prev[0] + f * (p[0] - prev[0]), prev[1] + f * (p[1] - prev[1])];
                    if seg_dist(w, q) <= 1e-9 {
                        return s.min(max_range);
                    }
                }
            }
        }
        if s >= max_range {
            return max_range;
        }
        let mut clear = f64::INFINITY;
        for &(c, r) in disks {
            if r > 0.0 {
                clear = clear.min((p[0] - c[0]).hypot(p[1] - c[1]) - r);
            }
        }
        for w in walls {
            clear = clear.min(seg_dist(w, p));
        }
        prev = p;
        s += clear.max(step);
    }
}

pub struct Scene {
    pub pose: Pose,
    pub disks: Vec<(Vec2, f64)>,
    pub walls: Vec<Segment>,
}

/// Disks and wall segments scattered around a sensor that sits in free space.
pub fn random_scene<R: Rng>(rng: &mut R) -> Scene {
    loop {
        let pose = Pose::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-3.1..3.1));
        let disks: Vec<(Vec2, f64)> = (0..rng.random_range(0..8))
            .map(|_| ([rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)], rng.random_range(0.1..1.5)))
            .collect();
        let walls: Vec<Segment> = (0..rng.random_range(0..5))
            .map(|_| {
                let a = [rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0)];
                let t: f64 = rng.random_range(-3.2..3.2);
                let l = rng.random_range(0.5..6.0);
                Segment { a, b: [a[0] + l * t.cos(), a[1] + l * t.sin()] }
            })
            .collect();
        let o = pose.position();
        let free = disks.iter().all(|(c, r)| (o[0] - c[0]).hypot(o[1] - c[1]) > r + 0.05);
        let off_walls = walls.iter().all(|w| {
            let e = [w.b[0] - w.a[0], w.b[1] - w.a[1]];
            let u = (((o[0] - w.a[0]) * e[0] + (o[1] - w.a[1]) * e[1]) / (e[0] * e[0] + e[1] * e[1])).clamp(0.0, 1.0);
            (o[0] - w.a[0] - u * e[0]).hypot(o[1] - w.a[1] - u * e[1]) > 0.05
        });
        if free && off_walls {
            return Scene { pose, disks, walls };
        }
    }
}

/// Largest per-beam difference between `cast_scan` and the marching oracle.
pub fn render_error(scene: &Scene, params: &hallunav::lidar::LidarParams, step: f64) -> f64 {
    let scan = hallunav::lidar::cast_scan(&scene.pose, &scene.disks, &scene.walls, params);
    let o = scene.pose.position();
    scan.ranges
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let a = scene.pose.yaw + params.beam_angle(i);
            let m = march_range(o, [a.cos(), a.sin()], &scene.disks, &scene.walls, params.max_range, step);
            (r - m).abs()
        })
        .fold(0.0, f64::max)
}

/// Exhaustive re-evaluation: every grid cell, every scan point, full sort.
pub fn dwa_oracle(points: &[[f64; 2]], goal: [f64; 2], current: ControlAction, cfg: &DwaConfig) -> ControlAction {
    let (vs, ws) = dwa_grid(current, cfg);
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    for &v in &vs {
        for &w in &ws {
            let n = ((v.abs() * cfg.sim_time / cfg.granularity).ceil() as usize).max(1);
            let h = cfg.sim_time / n as f64;
            let (mut x, mut y, mut th) = (0.0f64, 0.0f64, 0.0f64);
            let mut d = f64::INFINITY;
            for _ in 0..n {
                x += v * th.cos() * h;
                y += v * th.sin() * h;
                th += w * h;
                for q in points {
                    d = d.min(((x - q[0]) * (x - q[0]) + (y - q[1]) * (y - q[1])).sqrt());
                }
            }
            let clearance = (d - cfg.robot_radius).min(cfg.clearance_cap);
            if clearance <= 0.0 {
                continue;
            }
            let heading = normalize_angle((goal[1] - y).atan2(goal[0] - x) - th).abs();
            let cost = cfg.w_heading * heading + cfg.w_clearance / clearance + cfg.w_velocity * (cfg.v_max - v);
            rows.push((cost, v, w));
        }
    }
    rows.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(b.1.total_cmp(&a.1))
            .then(a.2.abs().total_cmp(&b.2.abs()))
            .then(a.2.total_cmp(&b.2))
    });
    rows.first().map_or(ControlAction::stop(), |r| ControlAction::new(r.1, r.2))
}
