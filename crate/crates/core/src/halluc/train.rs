use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    hallucination_loss, standard_normal4, EncoderArch, EncoderWeights, HallucinationLossReport, LossWeights,
    TapeEncoder,
};
use crate::autodiff::Tape;
use crate::decoder::{decode, DecoderConfig};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::rng::derive_seed;
use crate::world::{MotionPlan, Pose, DEFAULT_OBSTACLE_RADIUS};

pub const METRICS_HEADER: &str = "# hallunav-halluc-metrics v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HallucConfig {
    pub obstacles: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub decoder: DecoderConfig,
    pub radius: f64,
    /// Zero obstacle velocities at sampling time (static ablation).
    pub static_obstacles: bool,
    pub seed: u64,
    pub log_var_init: f64,
    pub validation_fraction: f64,
}

impl Default for HallucConfig {
    fn default() -> Self {
        Self {
            obstacles: 1,
            epochs: 50,
            batch_size: 32,
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            decoder: DecoderConfig::default(),
            radius: DEFAULT_OBSTACLE_RADIUS,
            static_obstacles: false,
            seed: 0,
            log_var_init: -4.0,
            validation_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 0 is the evaluation before any update.
    pub epoch: usize,
    pub train: HallucinationLossReport,
    pub val: HallucinationLossReport,
    /// Mean latent standard deviation over validation plans.
    pub sigma_mean: f64,
    /// Mean pairwise distance between four start samples per validation plan.
    pub diversity: f64,
}

#[derive(Debug, Clone)]
pub struct HallucTraining {
    /// Weights with the lowest validation total.
    pub weights: EncoderWeights,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    /// Epoch at which a non-finite loss stopped training.
    pub diverged: Option<usize>,
    pub validation_ids: Vec<usize>,
}

struct Element {
    report: HallucinationLossReport,
    grad: Option<Vec<f64>>,
    sigma: f64,
    starts: Vec<[f64; 4]>,
}

fn evaluate(
    w: &EncoderWeights,
    plan: &MotionPlan,
    eps: &[[f64; 4]],
    cfg: &HallucConfig,
    want_grad: bool,
) -> Result<Element> {
    let mut tape = Tape::with_capacity(400_000, 1_000_000);
    let enc = TapeEncoder::load(&mut tape, w);
    let (latents, obstacles) = enc.encode_sample(&mut tape, plan, eps, cfg.static_obstacles)?;
    let decoded = decode(
        &mut tape,
        &obstacles,
        &Pose::origin(),
        &plan.goal(),
        plan.len(),
        plan.dt(),
        &cfg.decoder,
    )?;
    let (total, report) = hallucination_loss(&mut tape, plan, &decoded.plan, &obstacles, &cfg.loss)?;
    let grad = if want_grad {
        let g = tape.backward(total)?;
        Some(g.as_slice()[..w.params.len()].to_vec())
    } else {
        None
    };
    let mut sigma = 0.0;
    for l in &latents {
        for lv in l.log_var {
            sigma += (0.5 * lv.value()).exp();
        }
    }
    sigma /= (4 * latents.len()) as f64;
    let starts = latents
        .iter()
        .map(|l| {
            let m = l.mean.map(|d| d.value());
            let s = l.log_var.map(|d| (0.5 * d.value()).exp());
            [m[0], m[1], s[0], s[1]]
        })
        .collect();
    Ok(Element {
        report,
        grad,
        sigma,
        starts,
    })
}

fn noise(seed: u64, parts: &[u64], n: usize) -> Vec<[f64; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, parts));
    (0..n).map(|_| standard_normal4(&mut rng)).collect()
}

fn mean_report(rs: &[HallucinationLossReport], lp: f64, lc: f64) -> HallucinationLossReport {
    let n = rs.len().max(1) as f64;
    let recon = rs.iter().map(|r| r.recon).sum::<f64>() / n;
    let prior = rs.iter().map(|r| r.prior).sum::<f64>() / n;
    let coll = rs.iter().map(|r| r.coll).sum::<f64>() / n;
    HallucinationLossReport::combine(recon, prior, coll, lp, lc)
}

/// Splits plan indices into (train, validation). With too few plans for a
/// non-empty split both sides use every plan.
pub(crate) fn split_ids(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_val = (n as f64 * fraction).round() as usize;
    let mut ids: Vec<usize> = (0..n).collect();
    if n_val == 0 || n_val >= n {
        return (ids.clone(), ids);
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5eed])));
    let mut val = ids[..n_val].to_vec();
    let mut train = ids[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

struct ValStats {
    report: HallucinationLossReport,
    sigma: f64,
    diversity: f64,
}

fn validate(w: &EncoderWeights, plans: &[MotionPlan], ids: &[usize], cfg: &HallucConfig) -> Result<ValStats> {
    let elems: Vec<Result<Element>> = ids
        .par_iter()
        .map(|&i| evaluate(w, &plans[i], &noise(cfg.seed, &[1, i as u64], cfg.obstacles), cfg, false))
        .collect();
    let mut reports = Vec::with_capacity(ids.len());
    let mut sigma = 0.0;
    let mut diversity = 0.0;
    for (k, e) in elems.into_iter().enumerate() {
        let e = e?;
        reports.push(e.report);
        sigma += e.sigma;
        let [mx, my, sx, sy] = e.starts[0];
        let draws = noise(cfg.seed, &[2, k as u64], 4);
        let pts: Vec<[f64; 2]> = draws.iter().map(|z| [mx + sx * z[0], my + sy * z[1]]).collect();
        let mut d = 0.0;
        for a in 0..4 {
            for b in a + 1..4 {
                d += crate::world::dist(pts[a], pts[b]) / 6.0;
            }
        }
        diversity += d;
    }
    let n = ids.len().max(1) as f64;
    Ok(ValStats {
        report: mean_report(&reports, cfg.loss.lambda_prior, cfg.loss.lambda_coll),
        sigma: sigma / n,
        diversity: diversity / n,
    })
}

fn is_numeric_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::NonFinite(_) | Error::DecoderDivergence { .. } | Error::Autodiff(_)
    )
}

/// Data-dependent init so that initial samples interact with the plans.
/// Output biases start the obstacle on the start-goal chord, reaching its
/// midpoint at mid-horizon while drifting along it at half the mean speed.
fn center_start_means(w: &mut EncoderWeights, plans: &[MotionPlan], ids: &[usize]) {
    let mut start = [0.0; 2];
    let mut vel = [0.0; 2];
    for &i in ids {
        let p = &plans[i];
        let (a, b) = (p.pose(0), p.goal());
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let len = dx.hypot(dy).max(1e-9);
        let steps = p.len().saturating_sub(1).max(1);
        let speed = (0..steps).map(|t| p.action(t).v).sum::<f64>() / steps as f64;
        let half_t = 0.5 * steps as f64 * p.dt();
        let v = [0.5 * speed * dx / len, 0.5 * speed * dy / len];
        let n = ids.len() as f64;
        start[0] += (a.x + 0.5 * dx - v[0] * half_t) / n;
        start[1] += (a.y + 0.5 * dy - v[1] * half_t) / n;
        vel[0] += v[0] / n;
        vel[1] += v[1] / n;
    }
    let mut at = 0;
    for (name, shape) in w.arch.blocks() {
        let n: usize = shape.iter().product();
        if name.ends_with(".b2") {
            w.params[at..at + 4].copy_from_slice(&[start[0], start[1], vel[0], vel[1]]);
        }
        at += n;
    }
}

/// Adam on `recon + λ_prior prior + λ_coll coll` through sample, decode and
/// loss. Returns the best-validation weights even when training diverges.
pub fn train_hallucination(
    plans: &[MotionPlan],
    cfg: &HallucConfig,
    init: Option<EncoderWeights>,
) -> Result<HallucTraining> {
    let first = plans.first().ok_or(Error::Empty("plan dataset"))?;
    if let Some(p) = plans.iter().find(|p| p.len() != first.len() || (p.dt() - first.dt()).abs() > 1e-12) {
        return Err(Error::HorizonMismatch(format!(
            "plans must share T and dt: {} @ {} vs {} @ {}",
            first.len(),
            first.dt(),
            p.len(),
            p.dt()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let fresh = init.is_none();
    let mut w = match init {
        Some(w) => w,
        None => EncoderWeights::init(EncoderArch::new(first.len(), cfg.obstacles), cfg.seed, cfg.log_var_init)?,
    };
    if w.arch.horizon != first.len() || w.arch.obstacles != cfg.obstacles {
        return Err(Error::InvalidConfig(format!(
            "encoder built for T={} N={}, data has T={} and config N={}",
            w.arch.horizon,
            w.arch.obstacles,
            first.len(),
            cfg.obstacles
        )));
    }
    let (train_ids, val_ids) = split_ids(plans.len(), cfg.validation_fraction, cfg.seed);
    if fresh {
        center_start_means(&mut w, plans, &train_ids);
    }

    let v0 = validate(&w, plans, &val_ids, cfg)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        train: v0.report,
        val: v0.report,
        sigma_mean: v0.sigma,
        diversity: v0.diversity,
    }];
    let mut best = (v0.report.total, 0, w.clone());
    let mut opt = Adam::new(cfg.adam, w.params.len());
    let mut order = train_ids.clone();
    let mut diverged = None;

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[3, epoch as u64])));
        let mut reports = Vec::with_capacity(order.len());
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<Element>> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let eps = noise(cfg.seed, &[4, epoch as u64, b as u64, k as u64], cfg.obstacles);
                    evaluate(&w, &plans[i], &eps, cfg, true)
                })
                .collect();
            let mut grad = vec![0.0; w.params.len()];
            for r in results {
                let e = match r {
                    Ok(e) => e,
                    Err(e) if is_numeric_failure(&e) => {
                        diverged = Some(epoch);
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                };
                for (g, x) in grad.iter_mut().zip(e.grad.expect("gradient requested")) {
                    *g += x;
                }
                reports.push(e.report);
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if grad.iter().any(|g| !g.is_finite()) {
                diverged = Some(epoch);
                break 'epochs;
            }
            opt.step(&mut w.params, &grad);
        }
        let v = match validate(&w, plans, &val_ids, cfg) {
            Ok(v) if v.report.is_finite() => v,
            Ok(_) => {
                diverged = Some(epoch);
                break;
            }
            Err(e) if is_numeric_failure(&e) => {
                diverged = Some(epoch);
                break;
            }
            Err(e) => return Err(e),
        };
        log.push(EpochLog {
            epoch,
            train: mean_report(&reports, cfg.loss.lambda_prior, cfg.loss.lambda_coll),
            val: v.report,
            sigma_mean: v.sigma,
            diversity: v.diversity,
        });
        if v.report.total < best.0 {
            best = (v.report.total, epoch, w.clone());
        }
    }
    Ok(HallucTraining {
        weights: best.2,
        best_epoch: best.1,
        log,
        diverged,
        validation_ids: val_ids,
    })
}

pub fn metrics_log_text(log: &[EpochLog]) -> String {
    let mut s = format!(
        "{METRICS_HEADER}\nepoch\trecon\tprior\tcoll\ttotal\tval_recon\tval_prior\tval_coll\tval_total\tsigma_mean\tdiversity\n"
    );
    for e in log {
        let _ = writeln!(
            s,
            "{}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.6e}\t{:.6e}",
            e.epoch,
            e.train.recon,
            e.train.prior,
            e.train.coll,
            e.train.total,
            e.val.recon,
            e.val.prior,
            e.val.coll,
            e.val.total,
            e.sigma_mean,
            e.diversity
        );
    }
    s
}

pub fn write_metrics_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    std::fs::write(path, metrics_log_text(log))?;
    Ok(())
}
