//! Scan-history planner `f_θ`: a shared two-layer tanh cell run over the `L`
//! scans (oldest first) with a carried hidden state, the goal direction
//! appended before the output layer, and scaled-tanh action squashing.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, TrainSample};
use crate::error::{Error, Result};
use crate::io::{Container, FlatArray};
use crate::lidar::{LidarParams, ScanHistory};
use crate::optim::{Adam, AdamConfig};
use crate::rng::derive_seed;
use crate::world::{ControlAction, Vec2};

pub const V_MAX: f64 = 1.0;
pub const W_MAX: f64 = 1.57;
pub const WEIGHTS_KIND: &str = "planner-weights";
pub const METRICS_HEADER: &str = "# hallunav-planner-metrics v1";

const BLOCKS: [&str; 7] = ["w1x", "w1h", "b1", "w2", "b2", "w3", "b3"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerArch {
    pub history: usize,
    pub beams: usize,
    pub hidden: usize,
}

impl PlannerArch {
    pub fn new(history: usize, beams: usize) -> Self {
        Self {
            history,
            beams,
            hidden: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.history == 0 || self.beams == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig(format!("degenerate planner architecture {self:?}")));
        }
        Ok(())
    }

    fn shape(&self, block: usize) -> (usize, usize) {
        let h = self.hidden;
        match block {
            0 => (h, self.beams),
            1 | 3 => (h, h),
            2 | 4 => (h, 1),
            5 => (2, h + 2),
            _ => (2, 1),
        }
    }

    fn offsets(&self) -> [usize; 8] {
        let mut o = [0; 8];
        for b in 0..7 {
            let (r, c) = self.shape(b);
            o[b + 1] = o[b] + r * c;
        }
        o
    }

    pub fn param_count(&self) -> usize {
        self.offsets()[7]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerWeights {
    pub arch: PlannerArch,
    /// Ranges are divided by this before entering the network.
    pub max_range: f64,
    pub params: Vec<f64>,
}

struct Layers<'a> {
    w1x: ArrayView2<'a, f64>,
    w1h: ArrayView2<'a, f64>,
    b1: ArrayView1<'a, f64>,
    w2: ArrayView2<'a, f64>,
    b2: ArrayView1<'a, f64>,
    w3: ArrayView2<'a, f64>,
    b3: ArrayView1<'a, f64>,
}

struct LayersMut<'a> {
    w1x: ArrayViewMut2<'a, f64>,
    w1h: ArrayViewMut2<'a, f64>,
    b1: ArrayViewMut1<'a, f64>,
    w2: ArrayViewMut2<'a, f64>,
    b2: ArrayViewMut1<'a, f64>,
    w3: ArrayViewMut2<'a, f64>,
    b3: ArrayViewMut1<'a, f64>,
}

fn split_blocks<'a, T>(arch: &PlannerArch, mut rest: &'a mut [T]) -> Vec<&'a mut [T]> {
    let o = arch.offsets();
    let mut out = Vec::with_capacity(7);
    for b in 0..7 {
        let (head, tail) = rest.split_at_mut(o[b + 1] - o[b]);
        out.push(head);
        rest = tail;
    }
    out
}

fn layers<'a>(arch: &PlannerArch, p: &'a [f64]) -> Layers<'a> {
    let o = arch.offsets();
    let m = |b: usize| {
        ArrayView2::from_shape(arch.shape(b), &p[o[b]..o[b + 1]]).expect("block shape")
    };
    let v = |b: usize| ArrayView1::from(&p[o[b]..o[b + 1]]);
    Layers {
        w1x: m(0),
        w1h: m(1),
        b1: v(2),
        w2: m(3),
        b2: v(4),
        w3: m(5),
        b3: v(6),
    }
}

fn layers_mut<'a>(arch: &PlannerArch, p: &'a mut [f64]) -> LayersMut<'a> {
    let mut it = split_blocks(arch, p).into_iter().enumerate().map(|(b, s)| (arch.shape(b), s));
    let mut m = || {
        let (shape, s) = it.next().expect("seven blocks");
        ArrayViewMut2::from_shape(shape, s).expect("block shape")
    };
    let w1x = m();
    let w1h = m();
    let b1 = m().into_shape_with_order(arch.hidden).expect("bias");
    let w2 = m();
    let b2 = m().into_shape_with_order(arch.hidden).expect("bias");
    let w3 = m();
    let b3 = m().into_shape_with_order(2).expect("bias");
    LayersMut {
        w1x,
        w1h,
        b1,
        w2,
        b2,
        w3,
        b3,
    }
}

impl PlannerWeights {
    /// Xavier-uniform matrices, zero biases, output layer scaled by 0.1.
    pub fn init(arch: PlannerArch, max_range: f64, seed: u64) -> Result<Self> {
        arch.validate()?;
        if !(max_range > 0.0) {
            return Err(Error::InvalidConfig(format!("max_range must be positive, got {max_range}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(arch.param_count());
        for b in 0..7 {
            let (r, c) = arch.shape(b);
            if c == 1 {
                params.extend(std::iter::repeat_n(0.0, r));
                continue;
            }
            let mut a = (6.0 / (r + c) as f64).sqrt();
            if b == 5 {
                a *= 0.1;
            }
            params.extend((0..r * c).map(|_| rng.random_range(-a..a)));
        }
        Ok(Self { arch, max_range, params })
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(WEIGHTS_KIND);
        let a = &self.arch;
        c.push(FlatArray {
            name: "arch".into(),
            shape: vec![3],
            data: vec![a.history as f64, a.beams as f64, a.hidden as f64],
        });
        c.push(FlatArray::scalar("max_range", self.max_range));
        let o = a.offsets();
        for (b, name) in BLOCKS.iter().enumerate() {
            let (r, cols) = a.shape(b);
            let shape = if cols == 1 { vec![r] } else { vec![r, cols] };
            c.push(FlatArray {
                name: (*name).into(),
                shape,
                data: self.params[o[b]..o[b + 1]].to_vec(),
            });
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(WEIGHTS_KIND)?;
        let dims = &c.get("arch")?.data;
        if dims.len() != 3 || dims.iter().any(|d| !(*d >= 1.0) || d.fract() != 0.0) {
            return Err(Error::Format(format!("bad planner arch {dims:?}")));
        }
        let arch = PlannerArch {
            history: dims[0] as usize,
            beams: dims[1] as usize,
            hidden: dims[2] as usize,
        };
        let max_range = c.scalar("max_range")?;
        let mut params = Vec::with_capacity(arch.param_count());
        for (b, name) in BLOCKS.iter().enumerate() {
            let (r, cols) = arch.shape(b);
            let a = c.get(name)?;
            if a.data.len() != r * cols {
                return Err(Error::Format(format!(
                    "block `{name}` holds {} values, expected {}",
                    a.data.len(),
                    r * cols
                )));
            }
            params.extend_from_slice(&a.data);
        }
        if params.iter().any(|p| !p.is_finite()) || !(max_range > 0.0) {
            return Err(Error::NonFinite("planner weights".into()));
        }
        Ok(Self { arch, max_range, params })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

/// Network inputs for a batch: one `B × beams` matrix per history slot.
pub struct Batch {
    pub scans: Vec<Array2<f64>>,
    pub goals: Array2<f64>,
    pub targets: Array2<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.goals.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_samples(samples: &[&TrainSample], arch: &PlannerArch, max_range: f64) -> Result<Self> {
        let (l, beams) = (arch.history, arch.beams);
        let n = samples.len();
        let mut scans = vec![Array2::zeros((n, beams)); l];
        let mut goals = Array2::zeros((n, 2));
        let mut targets = Array2::zeros((n, 2));
        for (i, s) in samples.iter().enumerate() {
            if s.history.len() != l * beams {
                return Err(Error::LengthMismatch {
                    what: "sample history (L x beams)",
                    expected: l * beams,
                    found: s.history.len(),
                });
            }
            for (t, scan) in scans.iter_mut().enumerate() {
                for (dst, &r) in scan.row_mut(i).iter_mut().zip(&s.history[t * beams..(t + 1) * beams]) {
                    *dst = r as f64 / max_range;
                }
            }
            goals[[i, 0]] = s.goal[0];
            goals[[i, 1]] = s.goal[1];
            targets[[i, 0]] = s.action.v;
            targets[[i, 1]] = s.action.w;
        }
        Ok(Self { scans, goals, targets })
    }
}

struct Trace {
    h1: Vec<Array2<f64>>,
    /// `h2[0]` is the zero initial state; `h2[t + 1]` follows scan `t`.
    h2: Vec<Array2<f64>>,
    z: Array2<f64>,
    out: Array2<f64>,
}

fn forward(w: &PlannerWeights, scans: &[Array2<f64>], goals: &Array2<f64>) -> Trace {
    let a = &w.arch;
    let ly = layers(a, &w.params);
    let n = goals.nrows();
    let mut h1 = Vec::with_capacity(scans.len());
    let mut h2 = vec![Array2::zeros((n, a.hidden))];
    for x in scans {
        let prev = h2.last().expect("initial state");
        let mut z1 = x.dot(&ly.w1x.t()) + prev.dot(&ly.w1h.t()) + &ly.b1;
        z1.mapv_inplace(f64::tanh);
        let mut z2 = z1.dot(&ly.w2.t()) + &ly.b2;
        z2.mapv_inplace(f64::tanh);
        h1.push(z1);
        h2.push(z2);
    }
    let last = h2.last().expect("at least one scan");
    let z = last.dot(&ly.w3.slice(ndarray::s![.., ..a.hidden]).t())
        + goals.dot(&ly.w3.slice(ndarray::s![.., a.hidden..]).t())
        + &ly.b3;
    let mut out = Array2::zeros((n, 2));
    for i in 0..n {
        out[[i, 0]] = 0.5 * V_MAX * (1.0 + z[[i, 0]].tanh());
        out[[i, 1]] = W_MAX * z[[i, 1]].tanh();
    }
    Trace { h1, h2, z, out }
}

/// Adds the parameter gradient for `d loss / d out` into `grad`.
fn backward(w: &PlannerWeights, scans: &[Array2<f64>], goals: &Array2<f64>, tr: &Trace, dout: &Array2<f64>, grad: &mut [f64]) {
    let a = &w.arch;
    let h = a.hidden;
    let ly = layers(a, &w.params);
    let mut g = layers_mut(a, grad);
    let mut dz = Array2::zeros(dout.raw_dim());
    for i in 0..dz.nrows() {
        let t0 = tr.z[[i, 0]].tanh();
        let t1 = tr.z[[i, 1]].tanh();
        dz[[i, 0]] = dout[[i, 0]] * 0.5 * V_MAX * (1.0 - t0 * t0);
        dz[[i, 1]] = dout[[i, 1]] * W_MAX * (1.0 - t1 * t1);
    }
    let last = tr.h2.last().expect("final state");
    g.w3.slice_mut(ndarray::s![.., ..h]).scaled_add(1.0, &dz.t().dot(last));
    g.w3.slice_mut(ndarray::s![.., h..]).scaled_add(1.0, &dz.t().dot(goals));
    g.b3.scaled_add(1.0, &dz.sum_axis(Axis(0)));
    let mut dh2 = dz.dot(&ly.w3.slice(ndarray::s![.., ..h]));
    for t in (0..scans.len()).rev() {
        let h2 = &tr.h2[t + 1];
        let h1 = &tr.h1[t];
        let da2 = &dh2 * &h2.mapv(|y| 1.0 - y * y);
        g.w2.scaled_add(1.0, &da2.t().dot(h1));
        g.b2.scaled_add(1.0, &da2.sum_axis(Axis(0)));
        let dh1 = da2.dot(&ly.w2);
        let da1 = &dh1 * &h1.mapv(|y| 1.0 - y * y);
        g.w1x.scaled_add(1.0, &da1.t().dot(&scans[t]));
        g.w1h.scaled_add(1.0, &da1.t().dot(&tr.h2[t]));
        g.b1.scaled_add(1.0, &da1.sum_axis(Axis(0)));
        dh2 = da1.dot(&ly.w1h);
    }
}

/// Per-sample `(e_v² + λ e_ω²) / 2`, averaged over the batch.
fn mse_and_dout(out: &Array2<f64>, targets: &Array2<f64>, omega_weight: f64, scale: f64) -> (f64, Array2<f64>) {
    let e = out - targets;
    let mut sum = 0.0;
    let mut dout = Array2::zeros(e.raw_dim());
    for i in 0..e.nrows() {
        sum += 0.5 * (e[[i, 0]].powi(2) + omega_weight * e[[i, 1]].powi(2));
        dout[[i, 0]] = e[[i, 0]] * scale;
        dout[[i, 1]] = omega_weight * e[[i, 1]] * scale;
    }
    (sum, dout)
}

/// Loss sum over the batch and its gradient, both divided by `denom`.
pub fn batch_loss_grad(w: &PlannerWeights, batch: &Batch, omega_weight: f64, denom: f64) -> (f64, Vec<f64>) {
    let tr = forward(w, &batch.scans, &batch.goals);
    let (sum, dout) = mse_and_dout(&tr.out, &batch.targets, omega_weight, 1.0 / denom);
    let mut grad = vec![0.0; w.params.len()];
    backward(w, &batch.scans, &batch.goals, &tr, &dout, &mut grad);
    (sum / denom, grad)
}

/// Mean loss without gradients.
pub fn batch_loss(w: &PlannerWeights, batch: &Batch, omega_weight: f64) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let tr = forward(w, &batch.scans, &batch.goals);
    mse_and_dout(&tr.out, &batch.targets, omega_weight, 0.0).0 / batch.len() as f64
}

/// Actions for every row of `batch`.
pub fn predict(w: &PlannerWeights, batch: &Batch) -> Vec<ControlAction> {
    let tr = forward(w, &batch.scans, &batch.goals);
    tr.out.rows().into_iter().map(|r| ControlAction::new(r[0], r[1])).collect()
}

pub fn planner_forward(history: &ScanHistory, goal: Vec2, w: &PlannerWeights) -> Result<ControlAction> {
    let a = &w.arch;
    if history.len() != a.history {
        return Err(Error::LengthMismatch {
            what: "scan history length",
            expected: a.history,
            found: history.len(),
        });
    }
    let mut scans = Vec::with_capacity(a.history);
    for s in &history.scans {
        if s.ranges.len() != a.beams {
            return Err(Error::LengthMismatch {
                what: "beams per scan",
                expected: a.beams,
                found: s.ranges.len(),
            });
        }
        if s.ranges.iter().any(|r| !r.is_finite()) || !(goal[0].is_finite() && goal[1].is_finite()) {
            return Err(Error::NonFinite("planner input".into()));
        }
        let row = Array1::from_iter(s.ranges.iter().map(|r| r / w.max_range));
        scans.push(row.insert_axis(Axis(0)));
    }
    let goals = Array2::from_shape_vec((1, 2), goal.to_vec()).expect("1x2");
    let tr = forward(w, &scans, &goals);
    Ok(ControlAction::new(tr.out[[0, 0]], tr.out[[0, 1]]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub omega_weight: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Rows per parallel work item inside a mini-batch.
    pub chunk: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            epochs: 20,
            batch_size: 64,
            adam: AdamConfig::default(),
            omega_weight: 1.0,
            validation_fraction: 0.1,
            seed: 0,
            chunk: 16,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.chunk == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig("planner epochs, batch, chunk and hidden must be positive".into()));
        }
        if !(self.omega_weight >= 0.0) || !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig("bad omega weight or validation fraction".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerEpoch {
    pub epoch: usize,
    pub train: f64,
    pub val: f64,
}

#[derive(Debug, Clone)]
pub struct PlannerTraining {
    pub weights: PlannerWeights,
    pub best_epoch: usize,
    pub log: Vec<PlannerEpoch>,
    /// Validation loss of predicting the training-set mean action.
    pub baseline: f64,
    pub diverged: Option<usize>,
    pub train_plans: Vec<u32>,
    pub validation_plans: Vec<u32>,
}

/// Plan ids split 90/10 (by default) with a seeded shuffle. With a single
/// plan both sides get it.
pub fn split_by_plan(samples: &[TrainSample], fraction: f64, seed: u64) -> (Vec<u32>, Vec<u32>) {
    let mut ids: Vec<u32> = samples.iter().map(|s| s.plan).collect();
    ids.sort_unstable();
    ids.dedup();
    let n_val = ((ids.len() as f64 * fraction).round() as usize).max(1);
    if ids.len() < 2 {
        return (ids.clone(), ids);
    }
    let n_val = n_val.min(ids.len() - 1);
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x9a11])));
    let mut val = ids[..n_val].to_vec();
    let mut train = ids[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

pub fn mean_action(samples: &[&TrainSample]) -> ControlAction {
    let n = samples.len().max(1) as f64;
    let v = samples.iter().map(|s| s.action.v).sum::<f64>() / n;
    let w = samples.iter().map(|s| s.action.w).sum::<f64>() / n;
    ControlAction::new(v, w)
}

pub fn constant_loss(samples: &[&TrainSample], c: ControlAction, omega_weight: f64) -> f64 {
    let n = samples.len().max(1) as f64;
    samples
        .iter()
        .map(|s| 0.5 * ((s.action.v - c.v).powi(2) + omega_weight * (s.action.w - c.w).powi(2)))
        .sum::<f64>()
        / n
}

fn evaluate(w: &PlannerWeights, samples: &[&TrainSample], cfg: &PlannerConfig) -> Result<f64> {
    let parts: Vec<Result<f64>> = samples
        .par_chunks(256)
        .map(|c| {
            let b = Batch::from_samples(c, &w.arch, w.max_range)?;
            Ok(batch_loss(w, &b, cfg.omega_weight) * c.len() as f64)
        })
        .collect();
    let mut sum = 0.0;
    for p in parts {
        sum += p?;
    }
    Ok(sum / samples.len().max(1) as f64)
}

/// Adam on the batch-mean loss; keeps the weights with the lowest
/// validation loss.
pub fn train_planner(dataset: &Dataset, cfg: &PlannerConfig) -> Result<PlannerTraining> {
    train_on_samples(&dataset.samples, dataset.history_len(), dataset.lidar(), cfg)
}

pub fn train_on_samples(
    samples: &[TrainSample],
    history: usize,
    lidar: LidarParams,
    cfg: &PlannerConfig,
) -> Result<PlannerTraining> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("planner dataset"));
    }
    let arch = PlannerArch {
        history,
        beams: lidar.beam_count,
        hidden: cfg.hidden,
    };
    let (train_plans, validation_plans) = split_by_plan(samples, cfg.validation_fraction, cfg.seed);
    let train: Vec<&TrainSample> = samples
        .iter()
        .filter(|s| train_plans.binary_search(&s.plan).is_ok())
        .collect();
    let val: Vec<&TrainSample> = samples
        .iter()
        .filter(|s| validation_plans.binary_search(&s.plan).is_ok())
        .collect();
    let baseline = constant_loss(&val, mean_action(&train), cfg.omega_weight);

    let mut w = PlannerWeights::init(arch, lidar.max_range, derive_seed(cfg.seed, &[0x1417]))?;
    let mut opt = Adam::new(cfg.adam, w.params.len());
    let mut best = (evaluate(&w, &val, cfg)?, 0, w.clone());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut diverged = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    'epochs: for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0xe90c, epoch as u64])));
        let mut train_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let rows: Vec<&TrainSample> = idx.iter().map(|&i| train[i]).collect();
            let denom = rows.len() as f64;
            let parts: Vec<Result<(f64, Vec<f64>)>> = rows
                .par_chunks(cfg.chunk)
                .map(|c| {
                    let b = Batch::from_samples(c, &w.arch, w.max_range)?;
                    Ok(batch_loss_grad(&w, &b, cfg.omega_weight, denom))
                })
                .collect();
            let mut grad = vec![0.0; w.params.len()];
            let mut loss = 0.0;
            for p in parts {
                let (l, g) = p?;
                loss += l;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                diverged = Some(epoch);
                break 'epochs;
            }
            train_sum += loss * denom;
            opt.step(&mut w.params, &grad);
        }
        let v = evaluate(&w, &val, cfg)?;
        if !v.is_finite() {
            diverged = Some(epoch);
            break;
        }
        log.push(PlannerEpoch {
            epoch,
            train: train_sum / train.len().max(1) as f64,
            val: v,
        });
        if v < best.0 {
            best = (v, epoch, w.clone());
        }
    }
    Ok(PlannerTraining {
        weights: best.2,
        best_epoch: best.1,
        log,
        baseline,
        diverged,
        train_plans,
        validation_plans,
    })
}

pub fn metrics_log_text(t: &PlannerTraining) -> String {
    let mut s = format!("{METRICS_HEADER}\n# baseline_val_mse {:.9e}\nepoch\ttrain_mse\tval_mse\n", t.baseline);
    for e in &t.log {
        let _ = writeln!(s, "{}\t{:.9e}\t{:.9e}", e.epoch, e.train, e.val);
    }
    s
}

pub fn write_metrics_log(path: &Path, t: &PlannerTraining) -> Result<()> {
    std::fs::write(path, metrics_log_text(t))?;
    Ok(())
}
