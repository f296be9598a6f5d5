//! Hallucination encoder: maps a motion plan to Gaussian parameters over the
//! start and velocity of `N` circular obstacles, trained through the
//! differentiable decoder so that sampled obstacles explain the plan.

mod train;

pub use train::{
    train_hallucination, write_metrics_log, EpochLog, HallucConfig, HallucTraining, METRICS_HEADER,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, Tape};
use crate::decoder::{reconstruction_loss, ReconstructedPlan, TapeObstacle};
use crate::error::{Error, Result};
use crate::io::{Container, FlatArray};
use crate::world::{MotionPlan, Obstacle, ObstacleTimeline, Vec2};

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 4.0;
pub const PRIOR_VAR_FLOOR: f64 = 1e-4;
const DIST_EPS: f64 = 1e-12;
const CONTAINER_KIND: &str = "encoder-weights";

/// Layer sizes of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderArch {
    pub horizon: usize,
    pub obstacles: usize,
    pub channels: [usize; 3],
    pub kernel: usize,
    pub stride: usize,
    pub hidden: usize,
}

impl EncoderArch {
    pub fn new(horizon: usize, obstacles: usize) -> Self {
        Self {
            horizon,
            obstacles,
            channels: [32, 32, 32],
            kernel: 5,
            stride: 2,
            hidden: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 3 || self.obstacles == 0 || self.kernel == 0 || self.stride == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig(format!("encoder architecture {self:?}")));
        }
        if self.channels.contains(&0) {
            return Err(Error::InvalidConfig("zero conv channels".into()));
        }
        Ok(())
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    /// Sequence lengths after each conv stage.
    pub fn lengths(&self) -> [usize; 3] {
        let mut len = self.horizon;
        let mut out = [0; 3];
        for o in &mut out {
            len = (len + 2 * self.pad() - self.kernel) / self.stride + 1;
            *o = len;
        }
        out
    }

    pub fn feature_len(&self) -> usize {
        self.channels[2] * self.lengths()[2]
    }

    fn conv_in(&self, layer: usize) -> usize {
        if layer == 0 { 4 } else { self.channels[layer - 1] }
    }

    fn head_in(&self, head: usize) -> usize {
        self.feature_len() + 4 * head
    }

    /// `(name, shape)` of every parameter block, in storage order.
    pub fn blocks(&self) -> Vec<(String, Vec<usize>)> {
        let mut b = Vec::new();
        for l in 0..3 {
            b.push((format!("conv{l}.weight"), vec![self.channels[l], self.conv_in(l), self.kernel]));
            b.push((format!("conv{l}.bias"), vec![self.channels[l]]));
        }
        for h in 0..self.obstacles {
            b.push((format!("head{h}.w1"), vec![self.hidden, self.head_in(h)]));
            b.push((format!("head{h}.b1"), vec![self.hidden]));
            b.push((format!("head{h}.w2"), vec![8, self.hidden]));
            b.push((format!("head{h}.b2"), vec![8]));
        }
        b
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub arch: EncoderArch,
    pub params: Vec<f64>,
}

impl EncoderWeights {
    /// Xavier-uniform init; the output layer is scaled down so the initial
    /// distribution is near `μ = 0` with log-variance `log_var_bias`.
    pub fn init(arch: EncoderArch, seed: u64, log_var_bias: f64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(arch.param_count());
        for (name, shape) in arch.blocks() {
            let n: usize = shape.iter().product();
            if name.ends_with("bias") || name.ends_with(".b1") {
                params.extend(std::iter::repeat_n(0.0, n));
            } else if name.ends_with(".b2") {
                params.extend([0.0, 0.0, 0.0, 0.0]);
                params.extend([log_var_bias; 4]);
            } else {
                let (fan_out, fan_in) = (shape[0], shape[1..].iter().product::<usize>());
                let mut a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                if name.ends_with(".w2") {
                    a *= 0.1;
                }
                params.extend((0..n).map(|_| rng.random_range(-a..a)));
            }
        }
        Ok(Self { arch, params })
    }

    /// Zeroes the last layer of every head.
    pub fn zero_output_layers(&mut self) {
        let mut at = 0;
        for (name, shape) in self.arch.blocks() {
            let n: usize = shape.iter().product();
            if name.ends_with(".w2") || name.ends_with(".b2") {
                self.params[at..at + n].fill(0.0);
            }
            at += n;
        }
    }

    pub fn to_container(&self) -> Container {
        let a = &self.arch;
        let mut c = Container::new(CONTAINER_KIND);
        c.push(FlatArray::scalar("arch.horizon", a.horizon as f64));
        c.push(FlatArray::scalar("arch.obstacles", a.obstacles as f64));
        c.push(FlatArray {
            name: "arch.channels".into(),
            shape: vec![3],
            data: a.channels.iter().map(|&x| x as f64).collect(),
        });
        c.push(FlatArray::scalar("arch.kernel", a.kernel as f64));
        c.push(FlatArray::scalar("arch.stride", a.stride as f64));
        c.push(FlatArray::scalar("arch.hidden", a.hidden as f64));
        let mut at = 0;
        for (name, shape) in a.blocks() {
            let n: usize = shape.iter().product();
            c.push(FlatArray {
                name,
                shape,
                data: self.params[at..at + n].to_vec(),
            });
            at += n;
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(CONTAINER_KIND)?;
        let int = |name: &str| -> Result<usize> { Ok(c.scalar(name)? as usize) };
        let ch = &c.get("arch.channels")?.data;
        if ch.len() != 3 {
            return Err(Error::Format("arch.channels must hold 3 values".into()));
        }
        let arch = EncoderArch {
            horizon: int("arch.horizon")?,
            obstacles: int("arch.obstacles")?,
            channels: [ch[0] as usize, ch[1] as usize, ch[2] as usize],
            kernel: int("arch.kernel")?,
            stride: int("arch.stride")?,
            hidden: int("arch.hidden")?,
        };
        arch.validate()?;
        let mut params = Vec::with_capacity(arch.param_count());
        for (name, shape) in arch.blocks() {
            let a = c.get(&name)?;
            if a.shape != shape {
                return Err(Error::Format(format!("{name}: shape {:?}, expected {shape:?}", a.shape)));
            }
            params.extend_from_slice(&a.data);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("encoder weights".into()));
        }
        Ok(Self { arch, params })
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

/// Per-obstacle Gaussian over `(x⁰, y⁰, vˣ, vʸ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentObstacleDistribution {
    pub mean: Vec<[f64; 4]>,
    pub log_var: Vec<[f64; 4]>,
}

impl LatentObstacleDistribution {
    pub fn std(&self, i: usize) -> [f64; 4] {
        self.log_var[i].map(|lv| (0.5 * lv).exp())
    }
}

/// Latent parameters of one obstacle on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TapeLatent {
    pub mean: [Dual; 4],
    pub log_var: [Dual; 4],
}

/// Encoder parameters loaded as tape leaves. Leaves occupy the first nodes
/// of the tape, so their adjoints are the first entries of the gradient.
pub struct TapeEncoder {
    pub arch: EncoderArch,
    pub params: Vec<Dual>,
}

impl TapeEncoder {
    /// Must be called on an empty tape.
    pub fn load(tape: &mut Tape, w: &EncoderWeights) -> Self {
        debug_assert!(tape.is_empty());
        Self {
            arch: w.arch,
            params: w.params.iter().map(|&p| tape.var(p)).collect(),
        }
    }

    /// Conv feature vector for `plan`, channel-major.
    pub fn features(&self, tape: &mut Tape, plan: &MotionPlan) -> Result<Vec<Dual>> {
        let a = &self.arch;
        if plan.len() != a.horizon {
            return Err(Error::HorizonMismatch(format!(
                "encoder expects {} steps, plan has {}",
                a.horizon,
                plan.len()
            )));
        }
        let mut x: Vec<Vec<Dual>> = vec![Vec::with_capacity(a.horizon); 4];
        for s in plan.steps() {
            let vals = [s.pose.x, s.pose.y, s.action.v, s.action.w];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("encoder input".into()));
            }
            for (c, v) in vals.into_iter().enumerate() {
                x[c].push(tape.constant(v));
            }
        }
        let one = tape.constant(1.0);
        let lengths = a.lengths();
        let mut at = 0;
        let (k, pad) = (a.kernel, a.pad() as isize);
        let mut ws = Vec::new();
        let mut xs = Vec::new();
        for l in 0..3 {
            let (cin, cout) = (a.conv_in(l), a.channels[l]);
            let w_at = at;
            let b_at = at + cout * cin * k;
            at = b_at + cout;
            let len_in = x[0].len() as isize;
            let mut y = vec![Vec::with_capacity(lengths[l]); cout];
            for (o, yo) in y.iter_mut().enumerate() {
                for p in 0..lengths[l] {
                    ws.clear();
                    xs.clear();
                    for (ci, xc) in x.iter().enumerate() {
                        for j in 0..k {
                            let pos = (p * a.stride) as isize + j as isize - pad;
                            if pos >= 0 && pos < len_in {
                                ws.push(self.params[w_at + (o * cin + ci) * k + j]);
                                xs.push(xc[pos as usize]);
                            }
                        }
                    }
                    ws.push(self.params[b_at + o]);
                    xs.push(one);
                    let z = tape.dot(&ws, &xs);
                    yo.push(tape.tanh(z));
                }
            }
            x = y;
        }
        Ok(x.into_iter().flatten().collect())
    }

    fn head_offset(&self, head: usize) -> usize {
        let a = &self.arch;
        let mut at = 0;
        for l in 0..3 {
            at += a.channels[l] * a.conv_in(l) * a.kernel + a.channels[l];
        }
        for h in 0..head {
            at += a.hidden * a.head_in(h) + a.hidden + 8 * a.hidden + 8;
        }
        at
    }

    /// Head `i` on the features and the samples of heads `< i`.
    pub fn head(&self, tape: &mut Tape, i: usize, features: &[Dual], previous: &[[Dual; 4]]) -> TapeLatent {
        let a = &self.arch;
        let mut input: Vec<Dual> = features.to_vec();
        for s in previous {
            input.extend_from_slice(s);
        }
        let one = tape.constant(1.0);
        input.push(one);
        let n_in = a.head_in(i);
        debug_assert_eq!(input.len(), n_in + 1);
        let w1 = self.head_offset(i);
        let b1 = w1 + a.hidden * n_in;
        let w2 = b1 + a.hidden;
        let b2 = w2 + 8 * a.hidden;
        let mut hidden = Vec::with_capacity(a.hidden + 1);
        let mut ws = Vec::with_capacity(n_in + 1);
        for j in 0..a.hidden {
            ws.clear();
            ws.extend_from_slice(&self.params[w1 + j * n_in..w1 + (j + 1) * n_in]);
            ws.push(self.params[b1 + j]);
            let z = tape.dot(&ws, &input);
            hidden.push(tape.tanh(z));
        }
        hidden.push(one);
        let mut out = [one; 8];
        for (r, o) in out.iter_mut().enumerate() {
            ws.clear();
            ws.extend_from_slice(&self.params[w2 + r * a.hidden..w2 + (r + 1) * a.hidden]);
            ws.push(self.params[b2 + r]);
            *o = tape.dot(&ws, &hidden);
        }
        let mut log_var = [one; 4];
        for c in 0..4 {
            let v = out[4 + c];
            log_var[c] = if v.value() < LOG_VAR_MIN {
                tape.constant(LOG_VAR_MIN)
            } else if v.value() > LOG_VAR_MAX {
                tape.constant(LOG_VAR_MAX)
            } else {
                v
            };
        }
        TapeLatent {
            mean: [out[0], out[1], out[2], out[3]],
            log_var,
        }
    }

    /// Runs the encoder and draws one obstacle per head with the given
    /// standard-normal noise. With `static_obstacles` the velocity samples
    /// are replaced by zero constants.
    pub fn encode_sample(
        &self,
        tape: &mut Tape,
        plan: &MotionPlan,
        eps: &[[f64; 4]],
        static_obstacles: bool,
    ) -> Result<(Vec<TapeLatent>, Vec<TapeObstacle>)> {
        if eps.len() != self.arch.obstacles {
            return Err(Error::LengthMismatch {
                what: "noise draws per obstacle",
                expected: self.arch.obstacles,
                found: eps.len(),
            });
        }
        let feats = self.features(tape, plan)?;
        let mut latents = Vec::with_capacity(eps.len());
        let mut samples: Vec<[Dual; 4]> = Vec::with_capacity(eps.len());
        for (i, e) in eps.iter().enumerate() {
            let lat = self.head(tape, i, &feats, &samples);
            let mut z = sample_latent(tape, &lat, *e);
            if static_obstacles {
                z[2] = tape.constant(0.0);
                z[3] = tape.constant(0.0);
            }
            latents.push(lat);
            samples.push(z);
        }
        let obstacles = samples
            .iter()
            .map(|z| TapeObstacle {
                start: [z[0], z[1]],
                velocity: [z[2], z[3]],
            })
            .collect();
        Ok((latents, obstacles))
    }
}

/// `z = μ + exp(½ log σ²) ⊙ ε`.
pub fn sample_latent(tape: &mut Tape, lat: &TapeLatent, eps: [f64; 4]) -> [Dual; 4] {
    let mut z = lat.mean;
    for c in 0..4 {
        let half = tape.scale(lat.log_var[c], 0.5);
        let sd = tape.exp(half);
        let noise = tape.scale(sd, eps[c]);
        z[c] = tape.add(lat.mean[c], noise);
    }
    z
}

pub fn standard_normal4<R: Rng + ?Sized>(rng: &mut R) -> [f64; 4] {
    std::array::from_fn(|_| StandardNormal.sample(rng))
}

/// Distribution parameters for `plan`. Later heads are conditioned on the
/// means of earlier ones.
pub fn encode(plan: &MotionPlan, w: &EncoderWeights) -> Result<LatentObstacleDistribution> {
    let mut tape = Tape::new();
    let enc = TapeEncoder::load(&mut tape, w);
    let zeros = vec![[0.0; 4]; w.arch.obstacles];
    let (lat, _) = enc.encode_sample(&mut tape, plan, &zeros, false)?;
    Ok(LatentObstacleDistribution {
        mean: lat.iter().map(|l| l.mean.map(Dual::value)).collect(),
        log_var: lat.iter().map(|l| l.log_var.map(Dual::value)).collect(),
    })
}

/// Draws one obstacle set for `plan` (autoregressively) as plain values.
pub fn sample_obstacles(
    plan: &MotionPlan,
    w: &EncoderWeights,
    radius: f64,
    static_obstacles: bool,
    rng: &mut ChaCha8Rng,
) -> Result<ObstacleTimeline> {
    let eps: Vec<[f64; 4]> = (0..w.arch.obstacles).map(|_| standard_normal4(rng)).collect();
    let mut tape = Tape::new();
    let enc = TapeEncoder::load(&mut tape, w);
    let (_, obs) = enc.encode_sample(&mut tape, plan, &eps, static_obstacles)?;
    let obstacles = obs
        .iter()
        .map(|o| {
            let (start, velocity) = o.values();
            Obstacle { start, velocity, radius }
        })
        .collect();
    ObstacleTimeline::new(obstacles, plan.dt())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HallucinationLossReport {
    pub recon: f64,
    pub prior: f64,
    pub coll: f64,
    pub total: f64,
}

impl HallucinationLossReport {
    pub fn combine(recon: f64, prior: f64, coll: f64, lambda_prior: f64, lambda_coll: f64) -> Self {
        Self {
            recon,
            prior,
            coll,
            total: recon + lambda_prior * prior + lambda_coll * coll,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.recon.is_finite() && self.prior.is_finite() && self.coll.is_finite() && self.total.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_prior: f64,
    pub lambda_coll: f64,
    pub clearance: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_prior: 0.01,
            lambda_coll: 1.0,
            clearance: 0.5,
        }
    }
}

/// Per-axis mean and variance of the plan positions, variance floored.
pub fn position_prior(plan: &MotionPlan) -> (Vec2, Vec2) {
    let pos = plan.positions();
    let n = pos.len() as f64;
    let mut mean = [0.0; 2];
    for p in &pos {
        mean[0] += p[0] / n;
        mean[1] += p[1] / n;
    }
    let mut var = [0.0; 2];
    for p in &pos {
        var[0] += (p[0] - mean[0]).powi(2) / n;
        var[1] += (p[1] - mean[1]).powi(2) / n;
    }
    (mean, var.map(|v| v.max(PRIOR_VAR_FLOOR)))
}

fn tape_dist(tape: &mut Tape, a: [Dual; 2], b: [Dual; 2]) -> Result<Dual> {
    let dx = tape.sub(a[0], b[0]);
    let dy = tape.sub(a[1], b[1]);
    let r2 = tape.dot(&[dx, dy], &[dx, dy]);
    let r2 = tape.add_const(r2, DIST_EPS);
    Ok(tape.sqrt(r2)?)
}

fn centre(tape: &mut Tape, o: &TapeObstacle, tau: f64) -> [Dual; 2] {
    [
        tape.linear(&[o.start[0], o.velocity[0]], &[1.0, tau], 0.0),
        tape.linear(&[o.start[1], o.velocity[1]], &[1.0, tau], 0.0),
    ]
}

/// Time index minimizing `dist(t)` by value.
fn argmin_t(n: usize, dist: impl Fn(usize) -> f64) -> usize {
    (0..n)
        .map(|t| (t, dist(t)))
        .fold((0, f64::INFINITY), |best, (t, d)| if d < best.1 { (t, d) } else { best })
        .0
}

/// Loss terms on the tape plus the matching report. Obstacle-to-plan and
/// obstacle-to-obstacle distances are time-synchronized minima over the horizon.
pub fn hallucination_loss(
    tape: &mut Tape,
    plan: &MotionPlan,
    p_hat: &ReconstructedPlan,
    obstacles: &[TapeObstacle],
    weights: &LossWeights,
) -> Result<(Dual, HallucinationLossReport)> {
    let recon = reconstruction_loss(tape, plan, p_hat)?;
    let (mean, var) = position_prior(plan);
    let dt = plan.dt();
    let n = plan.len();
    let c = weights.clearance;

    let mut nll = Vec::new();
    for o in obstacles {
        for axis in 0..2 {
            let e = tape.add_const(o.start[axis], -mean[axis]);
            let sq = tape.square(e);
            nll.push(tape.linear(&[sq], &[0.5 / var[axis]], 0.5 * (2.0 * std::f64::consts::PI * var[axis]).ln()));
        }
    }
    let prior = if obstacles.is_empty() {
        tape.constant(0.0)
    } else {
        let k = vec![1.0 / obstacles.len() as f64; nll.len()];
        tape.linear(&nll, &k, 0.0)
    };

    let positions = plan.positions();
    let pos_at = |o: &TapeObstacle, t: usize| -> Vec2 {
        let (s, v) = o.values();
        let tau = t as f64 * dt;
        [s[0] + v[0] * tau, s[1] + v[1] * tau]
    };
    let mut hinges = Vec::new();
    for o in obstacles {
        let t = argmin_t(n, |t| crate::world::dist(pos_at(o, t), positions[t]));
        let ct = centre(tape, o, t as f64 * dt);
        let p = [tape.constant(positions[t][0]), tape.constant(positions[t][1])];
        let d = tape_dist(tape, ct, p)?;
        let h = tape.linear(&[d], &[-1.0], c);
        let h = tape.max0(h);
        hinges.push(tape.square(h));
    }
    for i in 0..obstacles.len() {
        for j in i + 1..obstacles.len() {
            let (a, b) = (&obstacles[i], &obstacles[j]);
            let t = argmin_t(n, |t| crate::world::dist(pos_at(a, t), pos_at(b, t)));
            let tau = t as f64 * dt;
            let ca = centre(tape, a, tau);
            let cb = centre(tape, b, tau);
            let d = tape_dist(tape, ca, cb)?;
            let h = tape.linear(&[d], &[-1.0], c);
            let h = tape.max0(h);
            hinges.push(tape.square(h));
        }
    }
    let coll = if hinges.is_empty() { tape.constant(0.0) } else { tape.sum(&hinges) };
    let total = tape.linear(
        &[recon, prior, coll],
        &[1.0, weights.lambda_prior, weights.lambda_coll],
        0.0,
    );
    let report = HallucinationLossReport::combine(
        recon.value(),
        prior.value(),
        coll.value(),
        weights.lambda_prior,
        weights.lambda_coll,
    );
    if !report.is_finite() {
        return Err(Error::NonFinite("hallucination loss".into()));
    }
    Ok((total, report))
}
