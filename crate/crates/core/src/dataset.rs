//! Plan corpora and the supervised scan-history dataset built from
//! hallucinated obstacles.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::halluc::{sample_obstacles, EncoderWeights};
use crate::io::{sha256_hex, Container, FlatArray, Reader};
use crate::lidar::{assemble_history, cast_scan, LidarParams, LidarScan, ScanHistory};
use crate::rng::derive_seed;
use crate::world::{
    clearance_distance, dist, ControlAction, MotionPlan, Obstacle, ObstacleTimeline, Vec2, DEFAULT_DT,
    DEFAULT_HORIZON, DEFAULT_OBSTACLE_RADIUS, DEFAULT_ROBOT_RADIUS,
};

pub const MANIFEST_HEADER: &str = "# hallunav-dataset-manifest v1";
const PLANS_KIND: &str = "plan-set";
const DATASET_MAGIC: &[u8; 4] = b"HNDS";
const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub count: usize,
    pub seed: u64,
    pub horizon: usize,
    pub dt: f64,
    /// Seconds between velocity targets, sampled uniformly.
    pub knot_interval: [f64; 2],
    pub v_max: f64,
    pub w_max: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            count: 100,
            seed: 0,
            horizon: DEFAULT_HORIZON,
            dt: DEFAULT_DT,
            knot_interval: [1.0, 3.0],
            v_max: 1.0,
            w_max: 1.57,
        }
    }
}

/// Random smooth exploration in open space, sliced into `horizon`-step plans
/// each re-expressed in its own start frame.
pub fn collect_open_space_plans(cfg: &CollectConfig) -> Result<Vec<MotionPlan>> {
    if cfg.count == 0 {
        return Err(Error::InvalidConfig("plan count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0xc011]));
    let steps = cfg.count * cfg.horizon;
    let target = |rng: &mut ChaCha8Rng| {
        ControlAction::new(rng.random_range(0.0..=cfg.v_max), rng.random_range(-cfg.w_max..=cfg.w_max))
    };
    let mut actions = Vec::with_capacity(steps);
    let mut from = target(&mut rng);
    while actions.len() < steps {
        let to = target(&mut rng);
        let span = rng.random_range(cfg.knot_interval[0]..=cfg.knot_interval[1]);
        let n = ((span / cfg.dt).round() as usize).max(1);
        for k in 0..n {
            let f = k as f64 / n as f64;
            actions.push(ControlAction::new(
                from.v + f * (to.v - from.v),
                from.w + f * (to.w - from.w),
            ));
        }
        from = to;
    }
    actions
        .chunks_exact(cfg.horizon)
        .take(cfg.count)
        .map(|a| MotionPlan::from_actions(cfg.dt, a))
        .collect()
}

/// Where and to which side a swerving plan deviates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Swerve {
    /// Step of maximum lateral deviation.
    pub apex: usize,
    /// +1 when the plan bulges to the left (+y), -1 to the right.
    pub side: f64,
    pub amplitude: f64,
}

/// Straight runs with one sinusoidal heading excursion: the heading follows
/// `θ_max sin(2π (t − t0) / D)` inside the window, which carries the plan to
/// one side and back.
pub fn swerving_plans(count: usize, seed: u64, horizon: usize, dt: f64) -> Result<Vec<(MotionPlan, Swerve)>> {
    if count == 0 {
        return Err(Error::InvalidConfig("plan count must be at least 1".into()));
    }
    if horizon < 40 {
        return Err(Error::InvalidConfig(format!("swerving plans need T >= 40, got {horizon}")));
    }
    (0..count)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5e, k as u64]));
            let v = rng.random_range(0.6..=1.0);
            let span = rng.random_range(30..=36usize);
            let t0 = rng.random_range(2..=horizon - span - 2);
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let theta_max = side * rng.random_range(0.35..=0.55);
            let heading = |t: usize| {
                if t >= t0 && t <= t0 + span {
                    theta_max * (2.0 * std::f64::consts::PI * (t - t0) as f64 / span as f64).sin()
                } else {
                    0.0
                }
            };
            let actions: Vec<_> = (0..horizon)
                .map(|t| ControlAction::new(v, (heading(t + 1) - heading(t)) / dt))
                .collect();
            let plan = MotionPlan::from_actions(dt, &actions)?;
            let apex = t0 + span / 2;
            let amplitude = plan.pose(apex).y.abs();
            Ok((plan, Swerve { apex, side, amplitude }))
        })
        .collect()
}

pub fn plans_to_container(plans: &[MotionPlan]) -> Result<Container> {
    let first = plans.first().ok_or(Error::Empty("plan set"))?;
    let (t, dt) = (first.len(), first.dt());
    let mut data = Vec::with_capacity(plans.len() * t * 2);
    for p in plans {
        if p.len() != t || p.dt() != dt {
            return Err(Error::HorizonMismatch("plans in a set must share T and dt".into()));
        }
        for s in p.steps() {
            data.extend([s.action.v, s.action.w]);
        }
    }
    let mut c = Container::new(PLANS_KIND);
    c.push(FlatArray::scalar("dt", dt));
    c.push(FlatArray::new("actions", vec![plans.len(), t, 2], data)?);
    Ok(c)
}

pub fn plans_from_container(c: &Container) -> Result<Vec<MotionPlan>> {
    c.expect_kind(PLANS_KIND)?;
    let dt = c.scalar("dt")?;
    let a = c.get("actions")?;
    if a.shape.len() != 3 || a.shape[2] != 2 {
        return Err(Error::Format(format!("actions shape {:?}", a.shape)));
    }
    a.data
        .chunks_exact(a.shape[1] * 2)
        .map(|chunk| {
            let acts: Vec<_> = chunk.chunks_exact(2).map(|u| ControlAction::new(u[0], u[1])).collect();
            MotionPlan::from_actions(dt, &acts)
        })
        .collect()
}

pub fn write_plans(path: &Path, plans: &[MotionPlan]) -> Result<()> {
    plans_to_container(plans)?.write(path)
}

pub fn read_plans(path: &Path) -> Result<Vec<MotionPlan>> {
    plans_from_container(&Container::read(path)?)
}

pub fn plans_digest(plans: &[MotionPlan]) -> Result<String> {
    Ok(sha256_hex(&plans_to_container(plans)?.to_bytes()))
}

pub fn encoder_digest(w: &EncoderWeights) -> String {
    sha256_hex(&w.to_container().to_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub samples_per_plan: usize,
    pub obstacles: usize,
    pub history: usize,
    pub seed: u64,
    pub goal_ahead: f64,
    pub obstacle_radius: f64,
    pub robot_radius: f64,
    pub lidar: LidarParams,
    pub static_obstacles: bool,
    pub max_resamples: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            samples_per_plan: 4,
            obstacles: 1,
            history: 5,
            seed: 0,
            goal_ahead: 2.5,
            obstacle_radius: DEFAULT_OBSTACLE_RADIUS,
            robot_radius: DEFAULT_ROBOT_RADIUS,
            lidar: LidarParams::default(),
            static_obstacles: false,
            max_resamples: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub seed: u64,
    pub max_extra: usize,
    pub clearance: f64,
    pub max_tries: usize,
    pub fast_speed: f64,
    /// Extra obstacles are placed within the plan's bounding box grown by this.
    pub margin: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_extra: 5,
            clearance: 0.5,
            max_tries: 100,
            fast_speed: 0.9,
            margin: 2.0,
        }
    }
}

/// One sampled obstacle set for one plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub plan: usize,
    pub draw: usize,
    pub resamples: usize,
    pub skipped: bool,
    pub hallucinated: Vec<Obstacle>,
    pub extra: Vec<Obstacle>,
    /// Requested extra obstacles that rejection sampling could not place.
    pub extra_missing: usize,
    pub clearance: f64,
    pub flagged: bool,
}

impl DrawRecord {
    pub fn timeline(&self, dt: f64) -> ObstacleTimeline {
        let mut obstacles = self.hallucinated.clone();
        obstacles.extend_from_slice(&self.extra);
        ObstacleTimeline { obstacles, dt }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub augment: Option<AugmentConfig>,
    pub plan_count: usize,
    pub horizon: usize,
    pub dt: f64,
    pub plans_digest: String,
    pub encoder_digest: String,
    pub sample_count: usize,
    pub skipped_draws: usize,
    pub flagged_draws: usize,
    pub open_world_plans: Vec<usize>,
    pub draws: Vec<DrawRecord>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> Result<String> {
        Ok(format!("{MANIFEST_HEADER}\n{}", toml::to_string(self)?))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let body = text
            .strip_prefix(MANIFEST_HEADER)
            .and_then(|r| r.strip_prefix('\n'))
            .ok_or_else(|| Error::Format(format!("missing header line `{MANIFEST_HEADER}`")))?;
        Ok(toml::from_str(body)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub plan: u32,
    /// Draw index, `u32::MAX` for open-world samples.
    pub draw: u32,
    pub index: u32,
    pub flagged: bool,
    /// `L × beams` ranges, oldest scan first.
    pub history: Vec<f32>,
    pub goal: Vec2,
    pub action: ControlAction,
}

pub const OPEN_WORLD_DRAW: u32 = u32::MAX;

impl TrainSample {
    pub fn scan_history(&self, params: LidarParams) -> ScanHistory {
        ScanHistory {
            scans: self
                .history
                .chunks_exact(params.beam_count)
                .map(|c| LidarScan {
                    ranges: c.iter().map(|&r| r as f64).collect(),
                    params,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<TrainSample>,
    pub manifest: DatasetManifest,
}

fn render_samples(
    plan: &MotionPlan,
    plan_id: usize,
    draw: u32,
    timeline: &ObstacleTimeline,
    flagged: bool,
    cfg: &DatasetConfig,
) -> Result<Vec<TrainSample>> {
    let n = plan.len();
    let l = cfg.history;
    if n <= l {
        return Err(Error::HorizonMismatch(format!("plan of {n} steps cannot feed L = {l}")));
    }
    if (timeline.dt - plan.dt()).abs() > 1e-12 {
        return Err(Error::HorizonMismatch(format!(
            "timeline dt {} vs plan dt {}",
            timeline.dt,
            plan.dt()
        )));
    }
    let poses: Vec<_> = plan.steps().iter().map(|s| s.pose).collect();
    let scans: Vec<LidarScan> = (0..n)
        .map(|t| cast_scan(&poses[t], &timeline.disks_at(t), &[], &cfg.lidar))
        .collect();
    (l..n)
        .map(|i| {
            let h = assemble_history(&poses[i + 1 - l..=i], &scans[i + 1 - l..=i])?;
            Ok(TrainSample {
                plan: plan_id as u32,
                draw,
                index: i as u32,
                flagged,
                history: h.scans.iter().flat_map(|s| s.ranges.iter().map(|&r| r as f32)).collect(),
                goal: plan.goal_direction(i, cfg.goal_ahead),
                action: plan.action(i),
            })
        })
        .collect()
}

fn draw_obstacles(
    plan: &MotionPlan,
    plan_id: usize,
    draw: usize,
    w: &EncoderWeights,
    cfg: &DatasetConfig,
) -> Result<DrawRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[plan_id as u64, draw as u64]));
    let min_gap = cfg.obstacle_radius + cfg.robot_radius;
    let mut resamples = 0;
    loop {
        let tl = sample_obstacles(plan, w, cfg.obstacle_radius, cfg.static_obstacles, &mut rng)?;
        let overlaps = tl.obstacles.iter().any(|o| dist(o.start, [0.0, 0.0]) < min_gap);
        if !overlaps {
            let clearance = clearance_distance(plan, &tl, cfg.robot_radius)?;
            return Ok(DrawRecord {
                plan: plan_id,
                draw,
                resamples,
                skipped: false,
                hallucinated: tl.obstacles,
                extra: Vec::new(),
                extra_missing: 0,
                clearance,
                flagged: clearance < 0.0,
            });
        }
        if resamples == cfg.max_resamples {
            return Ok(DrawRecord {
                plan: plan_id,
                draw,
                resamples,
                skipped: true,
                hallucinated: Vec::new(),
                extra: Vec::new(),
                extra_missing: 0,
                clearance: f64::NAN,
                flagged: false,
            });
        }
        resamples += 1;
    }
}

fn validate_inputs(plans: &[MotionPlan], w: &EncoderWeights, cfg: &DatasetConfig) -> Result<()> {
    let first = plans.first().ok_or(Error::Empty("plan dataset"))?;
    if w.arch.horizon != first.len() || w.arch.obstacles != cfg.obstacles {
        return Err(Error::InvalidConfig(format!(
            "encoder built for T={} N={}, generation asks T={} N={}",
            w.arch.horizon,
            w.arch.obstacles,
            first.len(),
            cfg.obstacles
        )));
    }
    if cfg.history == 0 || cfg.samples_per_plan == 0 {
        return Err(Error::InvalidConfig("history length and samples per plan must be positive".into()));
    }
    cfg.lidar.validate()?;
    for p in plans {
        if p.len() != first.len() || (p.dt() - first.dt()).abs() > 1e-12 {
            return Err(Error::HorizonMismatch("plans must share T and dt".into()));
        }
    }
    Ok(())
}

/// Samples `S` obstacle sets per plan from the encoder, renders scans along
/// each plan and slices `(history, goal, action)` records for `i ∈ [L, T−1]`.
pub fn generate_dataset(plans: &[MotionPlan], w: &EncoderWeights, cfg: &DatasetConfig) -> Result<Dataset> {
    validate_inputs(plans, w, cfg)?;
    let per_plan: Vec<Result<(Vec<DrawRecord>, Vec<TrainSample>)>> = plans
        .par_iter()
        .enumerate()
        .map(|(pid, plan)| {
            let mut draws = Vec::with_capacity(cfg.samples_per_plan);
            let mut samples = Vec::new();
            for d in 0..cfg.samples_per_plan {
                let rec = draw_obstacles(plan, pid, d, w, cfg)?;
                if !rec.skipped {
                    samples.extend(render_samples(plan, pid, d as u32, &rec.timeline(plan.dt()), rec.flagged, cfg)?);
                }
                draws.push(rec);
            }
            Ok((draws, samples))
        })
        .collect();
    let mut draws = Vec::new();
    let mut samples = Vec::new();
    for r in per_plan {
        let (d, s) = r?;
        draws.extend(d);
        samples.extend(s);
    }
    let manifest = DatasetManifest {
        config: *cfg,
        augment: None,
        plan_count: plans.len(),
        horizon: plans[0].len(),
        dt: plans[0].dt(),
        plans_digest: plans_digest(plans)?,
        encoder_digest: encoder_digest(w),
        sample_count: samples.len(),
        skipped_draws: draws.iter().filter(|d| d.skipped).count(),
        flagged_draws: draws.iter().filter(|d| d.flagged).count(),
        open_world_plans: Vec::new(),
        draws,
    };
    Ok(Dataset { samples, manifest })
}

/// Number of extra static obstacles for one timeline, uniform on `0..=max`.
pub fn draw_extra_count<R: Rng + ?Sized>(max: usize, rng: &mut R) -> usize {
    rng.random_range(0..=max)
}

fn place_extra(
    plan: &MotionPlan,
    hallucinated: &[Obstacle],
    cfg: &AugmentConfig,
    radius: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<Obstacle>, usize) {
    let k = draw_extra_count(cfg.max_extra, rng);
    let pos = plan.positions();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &pos {
        for c in 0..2 {
            lo[c] = lo[c].min(p[c] - cfg.margin);
            hi[c] = hi[c].max(p[c] + cfg.margin);
        }
    }
    let dt = plan.dt();
    let mut placed: Vec<Obstacle> = Vec::with_capacity(k);
    let mut missing = 0;
    for _ in 0..k {
        let mut ok = None;
        for _ in 0..cfg.max_tries {
            let c = [rng.random_range(lo[0]..=hi[0]), rng.random_range(lo[1]..=hi[1])];
            let clear_plan = pos.iter().all(|p| dist(*p, c) >= cfg.clearance);
            let clear_halluc = hallucinated
                .iter()
                .all(|o| (0..pos.len()).all(|t| dist(o.position(t, dt), c) >= cfg.clearance));
            let clear_extra = placed.iter().all(|o| dist(o.start, c) >= cfg.clearance);
            if clear_plan && clear_halluc && clear_extra {
                ok = Some(c);
                break;
            }
        }
        match ok {
            Some(c) => placed.push(Obstacle {
                start: c,
                velocity: [0.0, 0.0],
                radius,
            }),
            None => missing += 1,
        }
    }
    (placed, missing)
}

/// (a) adds up to `max_extra` static obstacles to every sampled timeline and
/// re-renders its samples; (b) appends open-world samples for every plan
/// with a speed above `fast_speed`.
pub fn augment(dataset: &Dataset, plans: &[MotionPlan], cfg: &AugmentConfig) -> Result<Dataset> {
    let m = &dataset.manifest;
    if m.augment.is_some() {
        return Err(Error::InvalidConfig("dataset is already augmented".into()));
    }
    if plans.len() != m.plan_count || plans_digest(plans)? != m.plans_digest {
        return Err(Error::InvalidConfig("plans do not match the dataset manifest".into()));
    }
    let dcfg = m.config;
    let mut by_plan: BTreeMap<usize, Vec<&DrawRecord>> = BTreeMap::new();
    for d in &m.draws {
        by_plan.entry(d.plan).or_default().push(d);
    }
    let per_plan: Vec<Result<(Vec<DrawRecord>, Vec<TrainSample>)>> = by_plan
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(pid, recs)| {
            let plan = &plans[pid];
            let mut draws = Vec::with_capacity(recs.len());
            let mut samples = Vec::new();
            for rec in recs {
                let mut rec = rec.clone();
                if !rec.skipped {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[pid as u64, rec.draw as u64, 0xa0]));
                    let (extra, missing) = place_extra(plan, &rec.hallucinated, cfg, dcfg.obstacle_radius, &mut rng);
                    rec.extra = extra;
                    rec.extra_missing = missing;
                    let tl = rec.timeline(plan.dt());
                    rec.clearance = clearance_distance(plan, &tl, dcfg.robot_radius)?;
                    rec.flagged = rec.clearance < 0.0;
                    samples.extend(render_samples(plan, pid, rec.draw as u32, &tl, rec.flagged, &dcfg)?);
                }
                draws.push(rec);
            }
            Ok((draws, samples))
        })
        .collect();
    let mut draws = Vec::new();
    let mut samples = Vec::new();
    for r in per_plan {
        let (d, s) = r?;
        draws.extend(d);
        samples.extend(s);
    }
    let mut open_world_plans = Vec::new();
    for (pid, plan) in plans.iter().enumerate() {
        if plan.steps().iter().any(|s| s.action.v > cfg.fast_speed) {
            open_world_plans.push(pid);
            samples.extend(render_samples(plan, pid, OPEN_WORLD_DRAW, &ObstacleTimeline::empty(plan.dt()), false, &dcfg)?);
        }
    }
    let manifest = DatasetManifest {
        augment: Some(*cfg),
        sample_count: samples.len(),
        flagged_draws: draws.iter().filter(|d| d.flagged).count(),
        open_world_plans,
        draws,
        ..m.clone()
    };
    Ok(Dataset { samples, manifest })
}

/// Rebuilds a dataset from its manifest and the original inputs.
pub fn regenerate(manifest: &DatasetManifest, plans: &[MotionPlan], w: &EncoderWeights) -> Result<Dataset> {
    if plans_digest(plans)? != manifest.plans_digest {
        return Err(Error::InvalidConfig("plan set digest differs from the manifest".into()));
    }
    if encoder_digest(w) != manifest.encoder_digest {
        return Err(Error::InvalidConfig("encoder digest differs from the manifest".into()));
    }
    let base = generate_dataset(plans, w, &manifest.config)?;
    match &manifest.augment {
        Some(a) => augment(&base, plans, a),
        None => Ok(base),
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn history_len(&self) -> usize {
        self.manifest.config.history
    }

    pub fn lidar(&self) -> LidarParams {
        self.manifest.config.lidar
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let l = self.history_len();
        let beams = self.lidar().beam_count;
        let mut out = Vec::with_capacity(32 + self.samples.len() * (16 + 4 * l * beams + 32));
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(l as u32).to_le_bytes());
        out.extend_from_slice(&(beams as u32).to_le_bytes());
        out.extend_from_slice(&(self.samples.len() as u64).to_le_bytes());
        for s in &self.samples {
            out.extend_from_slice(&s.plan.to_le_bytes());
            out.extend_from_slice(&s.draw.to_le_bytes());
            out.extend_from_slice(&s.index.to_le_bytes());
            out.extend_from_slice(&(s.flagged as u32).to_le_bytes());
            for r in &s.history {
                out.extend_from_slice(&r.to_le_bytes());
            }
            for v in [s.goal[0], s.goal[1], s.action.v, s.action.w] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn samples_from_bytes(bytes: &[u8], manifest: &DatasetManifest) -> Result<Vec<TrainSample>> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != DATASET_MAGIC {
            return Err(Error::Format("bad dataset magic".into()));
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let l = r.u32()? as usize;
        let beams = r.u32()? as usize;
        let count = r.u64()? as usize;
        if l != manifest.config.history || beams != manifest.config.lidar.beam_count || count != manifest.sample_count {
            return Err(Error::Format(format!(
                "dataset header (L={l}, beams={beams}, n={count}) disagrees with its manifest"
            )));
        }
        let mut samples = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let plan = r.u32()?;
            let draw = r.u32()?;
            let index = r.u32()?;
            let flagged = r.u32()? != 0;
            let raw = r.take(4 * l * beams)?;
            let history = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let mut f = [0.0; 4];
            for v in &mut f {
                *v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            }
            samples.push(TrainSample {
                plan,
                draw,
                index,
                flagged,
                history,
                goal: [f[0], f[1]],
                action: ControlAction::new(f[2], f[3]),
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes in dataset".into()));
        }
        Ok(samples)
    }

    /// Writes `path` and the manifest next to it (`<path>.manifest.toml`).
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        std::fs::write(manifest_path(path), self.manifest.to_text()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mpath = manifest_path(path);
        let manifest = DatasetManifest::from_text(&std::fs::read_to_string(&mpath).map_err(|e| {
            Error::Format(format!("cannot read manifest {}: {e}", mpath.display()))
        })?)?;
        let samples = Self::samples_from_bytes(&std::fs::read(path)?, &manifest)?;
        Ok(Self { samples, manifest })
    }
}

/// Results of re-checking a dataset against its plans.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetAudit {
    pub expected_samples: usize,
    pub actual_samples: usize,
    pub checked_draws: usize,
    pub extra_obstacles: usize,
    pub open_world_plans: usize,
    pub problems: Vec<String>,
}

impl DatasetAudit {
    pub fn passed(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Count identity, recorded clearances and flags, extra-obstacle placement
/// and the open-world renders.
pub fn audit(dataset: &Dataset, plans: &[MotionPlan]) -> Result<DatasetAudit> {
    let m = &dataset.manifest;
    if plans.len() != m.plan_count || plans_digest(plans)? != m.plans_digest {
        return Err(Error::InvalidConfig("plans do not match the dataset manifest".into()));
    }
    let cfg = &m.config;
    let per_draw = m.horizon - cfg.history;
    let live = m.plan_count * cfg.samples_per_plan - m.skipped_draws;
    let expected = (live + m.open_world_plans.len()) * per_draw;
    let mut problems = Vec::new();
    if expected != dataset.len() || m.sample_count != dataset.len() {
        problems.push(format!("expected {expected} samples, found {} (manifest {})", dataset.len(), m.sample_count));
    }
    if m.draws.iter().filter(|d| d.skipped).count() != m.skipped_draws {
        problems.push("skip count disagrees with draw records".into());
    }
    let mut flags: BTreeMap<(u32, u32), bool> = BTreeMap::new();
    let mut extras = 0;
    let mut checked = 0;
    for d in m.draws.iter().filter(|d| !d.skipped) {
        let plan = &plans[d.plan];
        let c = clearance_distance(plan, &d.timeline(plan.dt()), cfg.robot_radius)?;
        if (c - d.clearance).abs() > 1e-9 || d.flagged != (c < 0.0) {
            problems.push(format!("plan {} draw {}: clearance {c} vs recorded {} (flag {})", d.plan, d.draw, d.clearance, d.flagged));
        }
        if let Some(a) = &m.augment {
            if d.extra.len() + d.extra_missing > a.max_extra {
                problems.push(format!("plan {} draw {}: too many extra obstacles", d.plan, d.draw));
            }
            let pos = plan.positions();
            for (i, o) in d.extra.iter().enumerate() {
                let near_plan = pos.iter().any(|p| dist(*p, o.start) < a.clearance);
                let near_halluc = d
                    .hallucinated
                    .iter()
                    .any(|h| (0..pos.len()).any(|t| dist(h.position(t, plan.dt()), o.start) < a.clearance));
                let near_extra = d.extra[..i].iter().any(|e| dist(e.start, o.start) < a.clearance);
                if o.velocity != [0.0, 0.0] || near_plan || near_halluc || near_extra {
                    problems.push(format!("plan {} draw {}: extra obstacle {i} violates placement", d.plan, d.draw));
                }
            }
            extras += d.extra.len();
        } else if !d.extra.is_empty() {
            problems.push(format!("plan {} draw {}: extra obstacles without augmentation", d.plan, d.draw));
        }
        flags.insert((d.plan as u32, d.draw as u32), d.flagged);
        checked += 1;
    }
    let fast: Vec<usize> = match &m.augment {
        Some(a) => plans
            .iter()
            .enumerate()
            .filter(|(_, p)| p.steps().iter().any(|s| s.action.v > a.fast_speed))
            .map(|(i, _)| i)
            .collect(),
        None => Vec::new(),
    };
    if fast != m.open_world_plans {
        problems.push("open-world plan list differs from the speed predicate".into());
    }
    let far = cfg.lidar.max_range as f32;
    let mut open_counts: BTreeMap<u32, usize> = BTreeMap::new();
    for s in &dataset.samples {
        if s.draw == OPEN_WORLD_DRAW {
            *open_counts.entry(s.plan).or_default() += 1;
            if s.flagged || s.history.iter().any(|&r| r != far) {
                problems.push(format!("plan {} index {}: open-world sample sees an obstacle", s.plan, s.index));
            }
        } else if flags.get(&(s.plan, s.draw)) != Some(&s.flagged) {
            problems.push(format!("plan {} draw {}: sample flag disagrees with its draw", s.plan, s.draw));
        }
    }
    for p in &m.open_world_plans {
        if open_counts.get(&(*p as u32)).copied().unwrap_or(0) != per_draw {
            problems.push(format!("plan {p}: wrong number of open-world samples"));
        }
    }
    problems.truncate(50);
    Ok(DatasetAudit {
        expected_samples: expected,
        actual_samples: dataset.len(),
        checked_draws: checked,
        extra_obstacles: extras,
        open_world_plans: m.open_world_plans.len(),
        problems,
    })
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.toml");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::halluc::EncoderArch;

    fn small_collect(count: usize) -> CollectConfig {
        CollectConfig {
            count,
            seed: 4,
            ..CollectConfig::default()
        }
    }

    #[test]
    fn collect_is_deterministic_and_bounded() {
        let a = collect_open_space_plans(&small_collect(1)).unwrap();
        assert_eq!(a, collect_open_space_plans(&small_collect(1)).unwrap());
        let many = collect_open_space_plans(&small_collect(500)).unwrap();
        assert_eq!(many.len(), 500);
        let mut fast = 0;
        for p in &many {
            for s in p.steps() {
                assert!(s.action.v.abs() <= 1.0 && s.action.w.abs() <= 1.57);
            }
            if p.steps().iter().any(|s| s.action.v > 0.9) {
                fast += 1;
            }
        }
        assert!(fast >= 50, "{fast} fast plans");
    }

    #[test]
    fn swerves_return_to_the_line() {
        for (p, s) in swerving_plans(20, 1, 50, 0.1).unwrap() {
            assert!(p.steps().iter().all(|st| st.action.w.abs() <= 1.57));
            assert!(s.amplitude > 0.2, "{}", s.amplitude);
            assert!(p.goal().y.abs() < 0.05 * s.amplitude.max(1.0));
            assert_eq!(p.pose(s.apex).y.signum(), s.side);
        }
    }

    #[test]
    fn plan_container_roundtrip() {
        let plans = collect_open_space_plans(&small_collect(3)).unwrap();
        let c = plans_to_container(&plans).unwrap();
        let back = plans_from_container(&Container::from_bytes(&c.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, plans);
    }

    #[test]
    fn extra_count_is_uniform() {
        // chi-square with 5 degrees of freedom; 15.09 is the 0.01 quantile
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 6];
        for _ in 0..10_000 {
            counts[draw_extra_count(5, &mut rng)] += 1;
        }
        let e = 10_000.0 / 6.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        assert!(chi2 < 15.09, "chi2 {chi2} counts {counts:?}");
    }

    #[test]
    fn generation_counts_goals_actions_and_io() {
        let plans = collect_open_space_plans(&small_collect(3)).unwrap();
        let w = EncoderWeights::init(EncoderArch::new(50, 1), 1, -2.0).unwrap();
        let cfg = DatasetConfig {
            samples_per_plan: 2,
            ..DatasetConfig::default()
        };
        let d = generate_dataset(&plans, &w, &cfg).unwrap();
        let skips = d.manifest.skipped_draws;
        assert_eq!(d.len(), (3 * 2 - skips) * 45);
        for s in &d.samples {
            assert!((s.goal[0].hypot(s.goal[1]) - 1.0).abs() < 1e-9);
            assert_eq!(s.action, plans[s.plan as usize].action(s.index as usize));
            assert_eq!(s.history.len(), 5 * 720);
        }
        let dir = std::env::temp_dir().join(format!("hallunav-ds-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("d.bin");
        d.write(&path).unwrap();
        let back = Dataset::read(&path).unwrap();
        assert_eq!(back, d);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
