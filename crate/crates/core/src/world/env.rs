use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Pose, Vec2};
use crate::error::{Error, Result};

/// First line of every environment file.
pub const ENV_HEADER: &str = "# hallunav-env v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

/// Axis-aligned arena `[0, width] x [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub width: f64,
    pub height: f64,
}

impl Arena {
    pub fn contains(&self, p: Vec2, margin: f64) -> bool {
        p[0] >= margin && p[0] <= self.width - margin && p[1] >= margin && p[1] <= self.height - margin
    }

    pub fn boundary(&self) -> Vec<Segment> {
        let (w, h) = (self.width, self.height);
        vec![
            Segment { a: [0.0, 0.0], b: [w, 0.0] },
            Segment { a: [w, 0.0], b: [w, h] },
            Segment { a: [w, h], b: [0.0, h] },
            Segment { a: [0.0, h], b: [0.0, 0.0] },
        ]
    }
}

/// How a scripted obstacle moves. Every profile reflects off the arena walls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionProfile {
    /// Constant velocity, reversing after travelling `span` metres.
    Shuttle { velocity: Vec2, span: f64 },
    /// Constant velocity until a wall, then specular reflection.
    WallBounce { velocity: Vec2 },
    /// Heading oscillates around a base heading.
    Sinusoidal {
        speed: f64,
        heading: f64,
        amplitude: f64,
        period: f64,
    },
    /// Drives through the waypoints at `speed`; holds the last one unless `looped`.
    Waypoints {
        speed: f64,
        points: Vec<Vec2>,
        looped: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleScript {
    pub radius: f64,
    pub start: Vec2,
    pub profile: MotionProfile,
}

impl ObstacleScript {
    pub fn max_speed(&self) -> f64 {
        match &self.profile {
            MotionProfile::Shuttle { velocity, .. } | MotionProfile::WallBounce { velocity } => {
                velocity[0].hypot(velocity[1])
            }
            MotionProfile::Sinusoidal { speed, .. } | MotionProfile::Waypoints { speed, .. } => *speed,
        }
    }

    /// Centre positions at steps `0..=steps`.
    pub fn track(&self, arena: &Arena, dt: f64, steps: usize) -> Vec<Vec2> {
        let r = self.radius;
        let mut pos = self.start;
        let mut out = Vec::with_capacity(steps + 1);
        out.push(pos);
        match &self.profile {
            MotionProfile::Shuttle { velocity, span } => {
                let mut vel = *velocity;
                let speed = vel[0].hypot(vel[1]);
                let mut travelled = 0.0;
                for _ in 0..steps {
                    pos = [pos[0] + vel[0] * dt, pos[1] + vel[1] * dt];
                    travelled += speed * dt;
                    if travelled >= *span && *span > 0.0 {
                        travelled -= span;
                        vel = [-vel[0], -vel[1]];
                    }
                    reflect(arena, r, &mut pos, &mut vel);
                    out.push(pos);
                }
            }
            MotionProfile::WallBounce { velocity } => {
                let mut vel = *velocity;
                for _ in 0..steps {
                    pos = [pos[0] + vel[0] * dt, pos[1] + vel[1] * dt];
                    reflect(arena, r, &mut pos, &mut vel);
                    out.push(pos);
                }
            }
            MotionProfile::Sinusoidal {
                speed,
                heading,
                amplitude,
                period,
            } => {
                // reflections mirror the base heading
                let mut base = [heading.cos(), heading.sin()];
                for k in 0..steps {
                    let t = k as f64 * dt;
                    let h = base[1].atan2(base[0]) + amplitude * (2.0 * PI * t / period).sin();
                    let mut vel = [speed * h.cos(), speed * h.sin()];
                    pos = [pos[0] + vel[0] * dt, pos[1] + vel[1] * dt];
                    let before = vel;
                    reflect(arena, r, &mut pos, &mut vel);
                    if before[0].signum() != vel[0].signum() {
                        base[0] = -base[0];
                    }
                    if before[1].signum() != vel[1].signum() {
                        base[1] = -base[1];
                    }
                    out.push(pos);
                }
            }
            MotionProfile::Waypoints {
                speed,
                points,
                looped,
            } => {
                let mut target = 0usize;
                for _ in 0..steps {
                    let mut budget = speed * dt;
                    let mut hops = 0;
                    while budget > 0.0 && target < points.len() && hops <= 2 * points.len() {
                        hops += 1;
                        let goal = points[target];
                        let d = super::dist(pos, goal);
                        if d <= budget {
                            pos = goal;
                            budget -= d;
                            target += 1;
                            if target == points.len() && *looped {
                                target = 0;
                            }
                        } else {
                            let f = budget / d;
                            pos = [pos[0] + f * (goal[0] - pos[0]), pos[1] + f * (goal[1] - pos[1])];
                            budget = 0.0;
                        }
                    }
                    let mut vel = [0.0, 0.0];
                    reflect(arena, r, &mut pos, &mut vel);
                    out.push(pos);
                }
            }
        }
        out
    }
}

fn reflect(arena: &Arena, r: f64, pos: &mut Vec2, vel: &mut Vec2) {
    let hi = [arena.width - r, arena.height - r];
    for k in 0..2 {
        if pos[k] < r {
            pos[k] = (2.0 * r - pos[k]).min(hi[k]);
            vel[k] = vel[k].abs();
        } else if pos[k] > hi[k] {
            pos[k] = (2.0 * hi[k] - pos[k]).max(r);
            vel[k] = -vel[k].abs();
        }
    }
}

/// One benchmark environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: String,
    pub seed: u64,
    pub difficulty: u32,
    pub arena: Arena,
    pub start: Pose,
    pub goal: Pose,
    pub walls: Vec<Segment>,
    pub obstacles: Vec<ObstacleScript>,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.arena.width > 0.0 && self.arena.height > 0.0) {
            return Err(Error::InvalidConfig(format!("{}: empty arena", self.id)));
        }
        for (what, p) in [("start", self.start), ("goal", self.goal)] {
            if !self.arena.contains(p.position(), 0.0) {
                return Err(Error::InvalidConfig(format!("{}: {what} outside arena", self.id)));
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.radius > 0.0) || !self.arena.contains(o.start, 0.0) {
                return Err(Error::InvalidConfig(format!("{}: obstacle {i} invalid", self.id)));
            }
            if let MotionProfile::Waypoints { points, .. } = &o.profile {
                if points.iter().any(|p| !self.arena.contains(*p, 0.0)) {
                    return Err(Error::InvalidConfig(format!(
                        "{}: obstacle {i} waypoint outside arena",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Obstacle centre tracks for steps `0..=steps`.
    pub fn tracks(&self, dt: f64, steps: usize) -> Vec<Vec<Vec2>> {
        self.obstacles
            .iter()
            .map(|o| o.track(&self.arena, dt, steps))
            .collect()
    }

    pub fn to_text(&self) -> Result<String> {
        Ok(format!("{ENV_HEADER}\n{}", toml::to_string(self)?))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let body = text
            .strip_prefix(ENV_HEADER)
            .and_then(|rest| rest.strip_prefix('\n'))
            .ok_or_else(|| Error::Format(format!("missing header line `{ENV_HEADER}`")))?;
        let spec: EnvSpec = toml::from_str(body)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> EnvSpec {
        let arena = Arena { width: 10.0, height: 5.0 };
        EnvSpec {
            id: "t0".into(),
            seed: 3,
            difficulty: 1,
            arena,
            start: Pose::new(1.0, 2.5, 0.0),
            goal: Pose::new(9.0, 2.5, 0.0),
            walls: arena.boundary(),
            obstacles: vec![
                ObstacleScript {
                    radius: 0.2,
                    start: [5.0, 2.5],
                    profile: MotionProfile::WallBounce { velocity: [0.3, 1.1] },
                },
                ObstacleScript {
                    radius: 0.2,
                    start: [3.0, 1.0],
                    profile: MotionProfile::Waypoints {
                        speed: 0.5,
                        points: vec![[3.0, 4.0], [6.0, 4.0]],
                        looped: true,
                    },
                },
                ObstacleScript {
                    radius: 0.3,
                    start: [7.0, 1.0],
                    profile: MotionProfile::Sinusoidal {
                        speed: 1.2,
                        heading: 1.0,
                        amplitude: 0.8,
                        period: 3.0,
                    },
                },
                ObstacleScript {
                    radius: 0.3,
                    start: [2.0, 4.0],
                    profile: MotionProfile::Shuttle { velocity: [1.0, 0.0], span: 2.0 },
                },
            ],
        }
    }

    #[test]
    fn text_roundtrip_is_byte_identical() {
        let s = spec();
        let text = s.to_text().unwrap();
        assert!(text.starts_with(ENV_HEADER));
        let back = EnvSpec::from_text(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_text().unwrap(), text);
    }

    #[test]
    fn missing_header_rejected() {
        let text = toml::to_string(&spec()).unwrap();
        assert!(matches!(EnvSpec::from_text(&text), Err(Error::Format(_))));
    }

    #[test]
    fn tracks_stay_inside_arena() {
        let s = spec();
        for (o, tr) in s.obstacles.iter().zip(s.tracks(0.1, 600)) {
            for p in tr {
                assert!(s.arena.contains(p, o.radius - 1e-9), "{p:?}");
            }
        }
    }

    #[test]
    fn shuttle_reverses() {
        let s = spec();
        let tr = s.obstacles[3].track(&s.arena, 0.1, 40);
        assert!((tr[20][0] - 4.0).abs() < 1e-9);
        assert!((tr[40][0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn waypoints_hold_last_point() {
        let arena = Arena { width: 10.0, height: 10.0 };
        let o = ObstacleScript {
            radius: 0.2,
            start: [1.0, 1.0],
            profile: MotionProfile::Waypoints { speed: 1.0, points: vec![[2.0, 1.0]], looped: false },
        };
        let tr = o.track(&arena, 0.1, 30);
        assert!((tr[5][0] - 1.5).abs() < 1e-9);
        assert_eq!(tr[30], [2.0, 1.0]);
    }
}
