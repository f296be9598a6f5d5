//! Space-time drawings of a plan and its hallucinated obstacles: an oblique
//! projection of (x, y, t) with time as height, plus plain-text tracks.

use std::fmt::Write as _;

use crate::world::{MotionPlan, Obstacle, Vec2};

pub const TRACKS_HEADER: &str = "# hallunav-tracks v1";

const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VizConfig {
    pub px_per_m: f64,
    /// Metres of height per second.
    pub time_scale: f64,
    /// Shear of the y axis into screen x and screen y.
    pub depth: [f64; 2],
    pub margin: f64,
}

impl Default for VizConfig {
    fn default() -> Self {
        Self {
            px_per_m: 60.0,
            time_scale: 1.0,
            depth: [0.5, 0.35],
            margin: 20.0,
        }
    }
}

/// Screen coordinates before the viewport shift (y grows downward).
pub fn project(p: Vec2, t: f64, cfg: &VizConfig) -> [f64; 2] {
    let s = cfg.px_per_m;
    [s * (p[0] + cfg.depth[0] * p[1]), -s * (cfg.depth[1] * p[1] + cfg.time_scale * t)]
}

fn obstacle_track(o: &Obstacle, steps: usize, dt: f64) -> Vec<(f64, Vec2)> {
    (0..steps).map(|t| (t as f64 * dt, o.position(t, dt))).collect()
}

fn path_d(points: &[[f64; 2]], shift: [f64; 2]) -> String {
    let mut d = String::new();
    for (i, p) in points.iter().enumerate() {
        let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, p[0] + shift[0], p[1] + shift[1]);
    }
    d.trim_end().to_string()
}

/// One standalone SVG document: gray plan curve, one coloured tube per
/// obstacle (centre line plus the two silhouette edges).
pub fn halluc_svg(plan: &MotionPlan, obstacles: &[Obstacle], cfg: &VizConfig) -> String {
    let n = plan.len();
    let dt = plan.dt();
    let plan_pts: Vec<[f64; 2]> = plan
        .steps()
        .iter()
        .enumerate()
        .map(|(t, s)| project(s.pose.position(), t as f64 * dt, cfg))
        .collect();
    let tubes: Vec<(Vec<[f64; 2]>, f64)> = obstacles
        .iter()
        .map(|o| {
            let pts = obstacle_track(o, n, dt).into_iter().map(|(t, p)| project(p, t, cfg)).collect();
            (pts, o.radius * cfg.px_per_m)
        })
        .collect();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    let mut grow = |p: [f64; 2], r: f64| {
        for c in 0..2 {
            lo[c] = lo[c].min(p[c] - r);
            hi[c] = hi[c].max(p[c] + r);
        }
    };
    plan_pts.iter().for_each(|p| grow(*p, 0.0));
    for (pts, r) in &tubes {
        pts.iter().for_each(|p| grow(*p, *r));
    }
    if !lo[0].is_finite() {
        lo = [0.0, 0.0];
        hi = [1.0, 1.0];
    }
    let shift = [cfg.margin - lo[0], cfg.margin - lo[1]];
    let (w, h) = (hi[0] - lo[0] + 2.0 * cfg.margin, hi[1] - lo[1] + 2.0 * cfg.margin);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, (pts, r)) in tubes.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let left: Vec<[f64; 2]> = pts.iter().map(|p| [p[0] - r, p[1]]).collect();
        let right: Vec<[f64; 2]> = pts.iter().map(|p| [p[0] + r, p[1]]).collect();
        let _ = writeln!(s, r#"<g class="obstacle" data-index="{i}" stroke="{color}" fill="none">"#);
        let _ = writeln!(s, r#"<path class="edge" d="{}" stroke-width="1"/>"#, path_d(&left, shift));
        let _ = writeln!(s, r#"<path class="edge" d="{}" stroke-width="1"/>"#, path_d(&right, shift));
        let _ = writeln!(s, r#"<path class="axis" d="{}" stroke-width="2" opacity="0.5"/>"#, path_d(pts, shift));
        if let (Some(a), Some(b)) = (pts.first(), pts.last()) {
            for p in [a, b] {
                let _ = writeln!(
                    s,
                    r#"<ellipse cx="{:.2}" cy="{:.2}" rx="{r:.2}" ry="{:.2}" stroke-width="1"/>"#,
                    p[0] + shift[0],
                    p[1] + shift[1],
                    r * cfg.depth[1]
                );
            }
        }
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(
        s,
        r##"<path class="plan" d="{}" stroke="#808080" stroke-width="3" fill="none"/>"##,
        path_d(&plan_pts, shift)
    );
    let _ = writeln!(s, "</svg>");
    s
}

/// `kind index t x y` rows for the plan and each obstacle centre.
pub fn tracks_text(plan: &MotionPlan, obstacles: &[Obstacle]) -> String {
    let dt = plan.dt();
    let mut s = format!("{TRACKS_HEADER}\nkind\tindex\tt\tx\ty\n");
    for (t, st) in plan.steps().iter().enumerate() {
        let p = st.pose.position();
        let _ = writeln!(s, "plan\t0\t{:.3}\t{:.6}\t{:.6}", t as f64 * dt, p[0], p[1]);
    }
    for (i, o) in obstacles.iter().enumerate() {
        for (t, p) in obstacle_track(o, plan.len(), dt) {
            let _ = writeln!(s, "obstacle\t{i}\t{t:.3}\t{:.6}\t{:.6}", p[0], p[1]);
        }
    }
    s
}
