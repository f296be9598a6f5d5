//! 2D LiDAR ray casting against obstacle disks and wall segments.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{Pose, Segment, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarParams {
    pub beam_count: usize,
    /// Total field of view, centred on the heading.
    pub fov: f64,
    pub max_range: f64,
}

impl Default for LidarParams {
    fn default() -> Self {
        Self {
            beam_count: 720,
            fov: 1.5 * PI,
            max_range: 10.0,
        }
    }
}

impl LidarParams {
    pub fn validate(&self) -> Result<()> {
        if self.beam_count == 0 || !(self.max_range > 0.0) || !(self.fov > 0.0 && self.fov <= 2.0 * PI) {
            return Err(Error::InvalidConfig(format!("bad lidar parameters {self:?}")));
        }
        Ok(())
    }

    pub fn increment(&self) -> f64 {
        self.fov / self.beam_count as f64
    }

    /// Beam angle relative to the heading; beam 0 sits at `-fov / 2`.
    pub fn beam_angle(&self, i: usize) -> f64 {
        self.fov * (i as f64 / self.beam_count as f64 - 0.5)
    }

    /// Nearest beam for a relative bearing, `None` outside the field of view.
    pub fn beam_index(&self, angle: f64) -> Option<usize> {
        let k = ((angle + 0.5 * self.fov) / self.increment()).round();
        if k < 0.0 || k >= self.beam_count as f64 {
            None
        } else {
            Some(k as usize)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    pub ranges: Vec<f64>,
    pub params: LidarParams,
}

impl LidarScan {
    pub fn empty(params: LidarParams) -> Self {
        Self {
            ranges: vec![params.max_range; params.beam_count],
            params,
        }
    }

    /// Hit points in the sensor frame; beams at `max_range` carry no point.
    pub fn points(&self) -> Vec<Vec2> {
        self.ranges
            .iter()
            .enumerate()
            .filter(|(_, &r)| r < self.params.max_range)
            .map(|(i, &r)| {
                let a = self.params.beam_angle(i);
                [r * a.cos(), r * a.sin()]
            })
            .collect()
    }

    /// Bins sensor-frame points into beams keeping the nearest per beam.
    pub fn from_points(points: &[Vec2], params: LidarParams) -> Self {
        let mut scan = Self::empty(params);
        for p in points {
            let r = p[0].hypot(p[1]);
            if !(r > 0.0) || r >= params.max_range {
                continue;
            }
            if let Some(k) = params.beam_index(p[1].atan2(p[0])) {
                if r < scan.ranges[k] {
                    scan.ranges[k] = r;
                }
            }
        }
        scan
    }

    /// Same sensor with `beams` beams: exact decimation when the counts
    /// divide, nearest-hit re-binning otherwise.
    pub fn resample(&self, beams: usize) -> LidarScan {
        let n = self.params.beam_count;
        let params = LidarParams { beam_count: beams, ..self.params };
        if beams == n {
            return self.clone();
        }
        if beams > 0 && n % beams == 0 {
            let k = n / beams;
            return LidarScan { ranges: (0..beams).map(|i| self.ranges[i * k]).collect(), params };
        }
        LidarScan::from_points(&self.points(), params)
    }

    pub fn min_range(&self) -> f64 {
        self.ranges.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `L` scans, oldest first, all expressed in the newest robot frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanHistory {
    pub scans: Vec<LidarScan>,
}

impl ScanHistory {
    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    pub fn newest(&self) -> &LidarScan {
        &self.scans[self.scans.len() - 1]
    }
}

/// Distance along the unit ray `o + s d` to the first entry into the disk, or
/// the exit when the origin is inside.
pub fn ray_disk(o: Vec2, d: Vec2, c: Vec2, r: f64) -> Option<f64> {
    if !(r > 0.0) {
        return None;
    }
    let ox = o[0] - c[0];
    let oy = o[1] - c[1];
    let b = d[0] * ox + d[1] * oy;
    let cq = ox * ox + oy * oy - r * r;
    let disc = b * b - cq;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let s1 = -b - sq;
    if s1 > 0.0 {
        return Some(s1);
    }
    let s2 = -b + sq;
    (s2 > 0.0).then_some(s2)
}

pub fn ray_segment(o: Vec2, d: Vec2, seg: &Segment) -> Option<f64> {
    let e = [seg.b[0] - seg.a[0], seg.b[1] - seg.a[1]];
    let denom = d[0] * e[1] - d[1] * e[0];
    if denom.abs() < 1e-15 {
        return None;
    }
    let w = [seg.a[0] - o[0], seg.a[1] - o[1]];
    let s = (w[0] * e[1] - w[1] * e[0]) / denom;
    let u = (w[0] * d[1] - w[1] * d[0]) / denom;
    (s > 0.0 && (0.0..=1.0).contains(&u)).then_some(s)
}

/// Renders one scan from `pose`.
pub fn cast_scan(pose: &Pose, disks: &[(Vec2, f64)], walls: &[Segment], params: &LidarParams) -> LidarScan {
    let o = pose.position();
    let ranges = (0..params.beam_count)
        .map(|i| {
            let a = pose.yaw + params.beam_angle(i);
            let d = [a.cos(), a.sin()];
            let mut best = params.max_range;
            for &(c, r) in disks {
                if let Some(s) = ray_disk(o, d, c, r) {
                    best = best.min(s);
                }
            }
            for w in walls {
                if let Some(s) = ray_segment(o, d, w) {
                    best = best.min(s);
                }
            }
            best
        })
        .collect();
    LidarScan {
        ranges,
        params: *params,
    }
}

/// Adds zero-mean Gaussian range noise, keeping ranges in `(0, max_range]`.
/// Beams without a return stay at `max_range`.
pub fn add_range_noise<R: Rng + ?Sized>(scan: &mut LidarScan, sigma: f64, rng: &mut R) {
    if !(sigma > 0.0) {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    let max = scan.params.max_range;
    for r in scan.ranges.iter_mut().filter(|r| **r < max) {
        *r = (*r + normal.sample(rng)).clamp(1e-6, max);
    }
}

/// Hit points of each scan expressed in the frame of the last pose.
pub fn reframe_points(poses: &[Pose], scans: &[LidarScan]) -> Result<Vec<Vec<Vec2>>> {
    if poses.len() != scans.len() {
        return Err(Error::LengthMismatch {
            what: "history poses vs scans",
            expected: scans.len(),
            found: poses.len(),
        });
    }
    let Some(newest) = poses.last() else {
        return Err(Error::Empty("scan history"));
    };
    Ok(poses
        .iter()
        .zip(scans)
        .map(|(pose, scan)| {
            scan.points()
                .into_iter()
                .map(|p| newest.to_local(pose.to_parent(p)))
                .collect()
        })
        .collect())
}

/// Re-expresses `L` raw scans in the newest pose's frame and re-bins them.
pub fn assemble_history(poses: &[Pose], scans: &[LidarScan]) -> Result<ScanHistory> {
    let params = scans.first().map(|s| s.params).ok_or(Error::Empty("scan history"))?;
    let points = reframe_points(poses, scans)?;
    Ok(ScanHistory {
        scans: points
            .iter()
            .map(|pts| LidarScan::from_points(pts, params))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimation_matches_a_coarser_render() {
        let fine = LidarParams::default();
        let coarse = LidarParams { beam_count: 180, ..fine };
        let disks = [([2.0, 0.5], 0.3), ([-1.0, 2.0], 0.5)];
        let a = cast_scan(&Pose::new(0.2, 0.1, 0.3), &disks, &[], &fine).resample(180);
        let b = cast_scan(&Pose::new(0.2, 0.1, 0.3), &disks, &[], &coarse);
        for (x, y) in a.ranges.iter().zip(&b.ranges) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_world_reads_max_range() {
        let p = LidarParams::default();
        let s = cast_scan(&Pose::origin(), &[], &[], &p);
        assert_eq!(s.ranges.len(), 720);
        assert!(s.ranges.iter().all(|&r| r == p.max_range));
    }

    #[test]
    fn forward_beam_hits_disk_surface() {
        let p = LidarParams::default();
        assert_eq!(p.beam_angle(360), 0.0);
        let s = cast_scan(&Pose::origin(), &[([1.0, 0.0], 0.165)], &[], &p);
        assert!((s.ranges[360] - 0.835).abs() < 1e-12);
    }

    #[test]
    fn zero_radius_disk_ignored() {
        let p = LidarParams::default();
        let s = cast_scan(&Pose::origin(), &[([1.0, 0.0], 0.0)], &[], &p);
        assert!(s.ranges.iter().all(|&r| r == p.max_range));
    }

    #[test]
    fn wall_ahead() {
        let p = LidarParams::default();
        let wall = Segment { a: [3.0, -5.0], b: [3.0, 5.0] };
        let s = cast_scan(&Pose::origin(), &[], &[wall], &p);
        assert!((s.ranges[360] - 3.0).abs() < 1e-12);
        // beams pointing backwards past ±90° never see it
        assert_eq!(s.ranges[0], p.max_range);
    }

    #[test]
    fn stationary_history_is_constant() {
        let p = LidarParams::default();
        let pose = Pose::new(1.0, 2.0, 0.3);
        let disks = [([3.0, 2.5], 0.3), ([0.0, 4.0], 0.2)];
        let scans: Vec<_> = (0..5).map(|_| cast_scan(&pose, &disks, &[], &p)).collect();
        let h = assemble_history(&[pose; 5], &scans).unwrap();
        for s in &h.scans {
            assert_eq!(s, &h.scans[0]);
        }
    }

    #[test]
    fn advancing_toward_wall_reframes_oldest_scan() {
        let p = LidarParams::default();
        let wall = Segment { a: [3.0, -5.0], b: [3.0, 5.0] };
        let old = Pose::origin();
        let new = Pose::new(0.5, 0.0, 0.0);
        let scans = [cast_scan(&old, &[], &[wall], &p), cast_scan(&new, &[], &[wall], &p)];
        let h = assemble_history(&[old, new], &scans).unwrap();
        assert!((h.scans[0].ranges[360] - 2.5).abs() < 1e-9);
        assert!((h.scans[1].ranges[360] - 2.5).abs() < 1e-9);
    }

    #[test]
    fn history_length_mismatch() {
        let p = LidarParams::default();
        let s = LidarScan::empty(p);
        assert!(matches!(
            assemble_history(&[Pose::origin()], &[s.clone(), s]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn noise_keeps_bounds() {
        use rand::SeedableRng;
        let p = LidarParams::default();
        let mut s = cast_scan(&Pose::origin(), &[([0.2, 0.0], 0.19)], &[], &p);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        add_range_noise(&mut s, 0.5, &mut rng);
        assert!(s.ranges.iter().all(|&r| r > 0.0 && r <= p.max_range));
    }
}
