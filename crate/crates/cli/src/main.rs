mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hallunav::bench::{self, EnvGenConfig, PlannerSpec, TrialConfig};
use hallunav::dataset::{self, AugmentConfig, CollectConfig, Dataset, DatasetConfig};
use hallunav::halluc::{self, EncoderWeights, HallucConfig};
use hallunav::lidar::LidarParams;
use hallunav::optim::AdamConfig;
use hallunav::planner::{self, PlannerConfig, PlannerWeights};
use hallunav::rng::derive_seed;
use hallunav::safety::SafetyConfig;
use hallunav::world::EnvSpec;

use run::{Resolver, RunManifest};

#[derive(Parser)]
#[command(name = "hallunav", version, about = "Learn dynamic obstacle hallucination and train scan-history planners")]
struct Cli {
    /// Default directory for stage inputs and outputs.
    #[arg(long, global = true, env = "HALLUNAV_OUT", default_value = "out")]
    out_dir: PathBuf,
    /// TOML file with one table per subcommand; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Random open-space exploration sliced into fixed-horizon plans.
    Collect(CollectArgs),
    /// Train the hallucination encoder on collected plans.
    TrainHalluc(TrainHallucArgs),
    /// Sample obstacles, render scan histories and build the training set.
    GenDataset(GenDatasetArgs),
    /// Fit the scan-history planner.
    TrainPlanner(TrainPlannerArgs),
    /// Run planners on procedural dynamic environments.
    Evaluate(EvaluateArgs),
    /// Draw plans with sampled obstacles as space-time SVGs.
    VizHalluc(VizArgs),
}

#[derive(Args)]
struct CollectArgs {
    #[arg(long)]
    plans: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainHallucArgs {
    /// Plan file [default: <out-dir>/plans.bin]
    #[arg(long)]
    plans: Option<PathBuf>,
    #[arg(long)]
    obstacles: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda_prior: Option<f64>,
    #[arg(long)]
    lambda_coll: Option<f64>,
    /// Zero hallucinated velocities (static ablation).
    #[arg(long = "static")]
    static_obstacles: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDatasetArgs {
    #[arg(long)]
    plans: Option<PathBuf>,
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Obstacle sets drawn per plan.
    #[arg(long)]
    samples: Option<usize>,
    /// Scan history length L.
    #[arg(long)]
    history: Option<usize>,
    #[arg(long)]
    beams: Option<usize>,
    #[arg(long = "static")]
    static_obstacles: bool,
    /// Skip the extra-obstacle and open-world augmentations.
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainPlannerArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Expected history length; must match the dataset.
    #[arg(long)]
    history: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
enum PlannerId {
    Dyna,
    StaticAblation,
    Dwa,
    Random,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Planners to run (repeatable).
    #[arg(long = "planner", value_enum)]
    planners: Vec<PlannerId>,
    /// Weights for `dyna` [default: <out-dir>/planner.bin]
    #[arg(long)]
    dyna_weights: Option<PathBuf>,
    /// Weights for `static-ablation` [default: <out-dir>/planner-static.bin]
    #[arg(long)]
    static_weights: Option<PathBuf>,
    /// History length the learned planners must have been trained with.
    #[arg(long)]
    history: Option<usize>,
    /// Read environments from this directory instead of generating them.
    #[arg(long)]
    env_dir: Option<PathBuf>,
    #[arg(long)]
    envs: Option<usize>,
    #[arg(long)]
    env_seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Enable the collision check with stop-and-reverse recovery.
    #[arg(long)]
    safety: bool,
    #[arg(long)]
    timeout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VizArgs {
    #[arg(long)]
    plans: Option<PathBuf>,
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Number of plans to draw, from the start of the file.
    #[arg(long)]
    count: Option<usize>,
    /// Obstacle sets per plan.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long = "static")]
    static_obstacles: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p).with_context(|| format!("cannot create {}", p.display()))?;
    }
    Ok(())
}

fn read_plans(path: &Path) -> Result<Vec<hallunav::world::MotionPlan>> {
    dataset::read_plans(path).with_context(|| format!("invalid plan file {}", path.display()))
}

fn read_encoder(path: &Path) -> Result<EncoderWeights> {
    EncoderWeights::read(path).with_context(|| format!("invalid encoder file {}", path.display()))
}

fn read_planner(path: &Path) -> Result<PlannerWeights> {
    PlannerWeights::read(path).with_context(|| format!("invalid planner file {}", path.display()))
}

fn collect(cli: &Cli, a: &CollectArgs) -> Result<RunManifest> {
    let mut r = Resolver::load(cli.config.as_deref(), "collect")?;
    let d = CollectConfig::default();
    let cfg = CollectConfig {
        count: r.get("plans", a.plans, d.count)?,
        horizon: r.get("horizon", a.horizon, d.horizon)?,
        seed: r.get("seed", a.seed, d.seed)?,
        ..d
    };
    let out = r.path("out", a.out.clone(), cli.out_dir.join("plans.bin"))?;
    let plans = dataset::collect_open_space_plans(&cfg)?;
    ensure_parent(&out)?;
    dataset::write_plans(&out, &plans)?;
    let mut m = RunManifest::new("collect", r.resolved);
    m.seeds.insert("collect".into(), cfg.seed);
    m.output(&out)?;
    let back = read_plans(&out)?;
    m.audit("roundtrip", back == plans, format!("{} plans", plans.len()));
    m.write_beside(&out)?;
    Ok(m)
}

fn train_halluc(cli: &Cli, a: &TrainHallucArgs) -> Result<RunManifest> {
    let mut r = Resolver::load(cli.config.as_deref(), "train-halluc")?;
    let d = HallucConfig::default();
    let plans_path = r.path("plans", a.plans.clone(), cli.out_dir.join("plans.bin"))?;
    let mut cfg = HallucConfig {
        obstacles: r.get("obstacles", a.obstacles, d.obstacles)?,
        epochs: r.get("epochs", a.epochs, d.epochs)?,
        batch_size: r.get("batch", a.batch, d.batch_size)?,
        adam: AdamConfig { lr: r.get("lr", a.lr, d.adam.lr)?, ..d.adam },
        static_obstacles: r.flag("static", a.static_obstacles, false)?,
        seed: r.get("seed", a.seed, d.seed)?,
        ..d
    };
    cfg.loss.lambda_prior = r.get("lambda_prior", a.lambda_prior, d.loss.lambda_prior)?;
    cfg.loss.lambda_coll = r.get("lambda_coll", a.lambda_coll, d.loss.lambda_coll)?;
    let out = r.path("out", a.out.clone(), cli.out_dir.join("encoder.bin"))?;
    let plans = read_plans(&plans_path)?;
    let t = halluc::train_hallucination(&plans, &cfg, None)?;
    ensure_parent(&out)?;
    t.weights.write(&out)?;
    let log = out.with_extension("metrics.txt");
    halluc::write_metrics_log(&log, &t.log)?;
    let mut m = RunManifest::new("train-halluc", r.resolved);
    m.seeds.insert("train".into(), cfg.seed);
    m.input(&plans_path)?;
    m.output(&out)?;
    m.output(&log)?;
    m.audit(
        "finite-training",
        t.diverged.is_none(),
        match t.diverged {
            Some(e) => format!("diverged at epoch {e}, kept epoch {}", t.best_epoch),
            None => format!("best epoch {}", t.best_epoch),
        },
    );
    if let (Some(first), Some(best)) = (t.log.first(), t.log.get(t.best_epoch)) {
        eprintln!("reconstruction {:.4} -> {:.4}", first.val.recon, best.val.recon);
    }
    m.write_beside(&out)?;
    Ok(m)
}

fn gen_dataset(cli: &Cli, a: &GenDatasetArgs) -> Result<RunManifest> {
    let mut r = Resolver::load(cli.config.as_deref(), "gen-dataset")?;
    let d = DatasetConfig::default();
    let plans_path = r.path("plans", a.plans.clone(), cli.out_dir.join("plans.bin"))?;
    let enc_path = r.path("encoder", a.encoder.clone(), cli.out_dir.join("encoder.bin"))?;
    let plans = read_plans(&plans_path)?;
    let w = read_encoder(&enc_path)?;
    let cfg = DatasetConfig {
        samples_per_plan: r.get("samples", a.samples, d.samples_per_plan)?,
        history: r.get("history", a.history, d.history)?,
        obstacles: w.arch.obstacles,
        lidar: LidarParams { beam_count: r.get("beams", a.beams, d.lidar.beam_count)?, ..d.lidar },
        static_obstacles: r.flag("static", a.static_obstacles, false)?,
        seed: r.get("seed", a.seed, d.seed)?,
        ..d
    };
    let augment = !r.flag("no_augment", a.no_augment, false)?;
    let out = r.path("out", a.out.clone(), cli.out_dir.join("dataset.bin"))?;
    let mut ds = dataset::generate_dataset(&plans, &w, &cfg)?;
    if augment {
        let acfg = AugmentConfig { seed: derive_seed(cfg.seed, &[0xa6]), ..AugmentConfig::default() };
        ds = dataset::augment(&ds, &plans, &acfg)?;
    }
    ensure_parent(&out)?;
    ds.write(&out)?;
    let audit = dataset::audit(&ds, &plans)?;
    let mut m = RunManifest::new("gen-dataset", r.resolved);
    m.seeds.insert("dataset".into(), cfg.seed);
    m.input(&plans_path)?;
    m.input(&enc_path)?;
    m.output(&out)?;
    m.output(&dataset::manifest_path(&out))?;
    m.audit(
        "dataset",
        audit.passed(),
        format!(
            "{} samples (expected {}), {} skipped draws, {} extra obstacles, {} open-world plans{}",
            audit.actual_samples,
            audit.expected_samples,
            ds.manifest.skipped_draws,
            audit.extra_obstacles,
            audit.open_world_plans,
            audit.problems.first().map(|p| format!("; {p}")).unwrap_or_default()
        ),
    );
    m.write_beside(&out)?;
    Ok(m)
}

fn train_planner(cli: &Cli, a: &TrainPlannerArgs) -> Result<RunManifest> {
    let mut r = Resolver::load(cli.config.as_deref(), "train-planner")?;
    let d = PlannerConfig::default();
    let ds_path = r.path("dataset", a.dataset.clone(), cli.out_dir.join("dataset.bin"))?;
    let ds = Dataset::read(&ds_path).with_context(|| format!("invalid dataset {}", ds_path.display()))?;
    if let Some(l) = r.get("history", a.history.map(Some), None)? {
        if l != ds.history_len() {
            bail!("configuration error: planner asks for L = {l} but {} was built with L = {}", ds_path.display(), ds.history_len());
        }
    }
    let cfg = PlannerConfig {
        hidden: r.get("hidden", a.hidden, d.hidden)?,
        epochs: r.get("epochs", a.epochs, d.epochs)?,
        batch_size: r.get("batch", a.batch, d.batch_size)?,
        adam: AdamConfig { lr: r.get("lr", a.lr, d.adam.lr)?, ..d.adam },
        seed: r.get("seed", a.seed, d.seed)?,
        ..d
    };
    let out = r.path("out", a.out.clone(), cli.out_dir.join("planner.bin"))?;
    let t = planner::train_planner(&ds, &cfg)?;
    ensure_parent(&out)?;
    t.weights.write(&out)?;
    let log = out.with_extension("metrics.txt");
    planner::write_metrics_log(&log, &t)?;
    let mut m = RunManifest::new("train-planner", r.resolved);
    m.seeds.insert("train".into(), cfg.seed);
    m.input(&ds_path)?;
    m.output(&out)?;
    m.output(&log)?;
    let best = t.log.get(t.best_epoch).map_or(f64::NAN, |e| e.val);
    m.audit("finite-training", t.diverged.is_none(), format!("best epoch {}", t.best_epoch));
    eprintln!("validation mse {best:.4} (constant predictor {:.4})", t.baseline);
    m.write_beside(&out)?;
    Ok(m)
}

fn load_envs(dir: &Path) -> Result<Vec<EnvSpec>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read environment directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no environment files in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| EnvSpec::read(p).with_context(|| format!("invalid environment file {}", p.display())))
        .collect()
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<RunManifest> {
    let mut r = Resolver::load(cli.config.as_deref(), "evaluate")?;
    let ids: Vec<PlannerId> = r.get(
        "planners",
        (!a.planners.is_empty()).then(|| a.planners.clone()),
        vec![PlannerId::Dyna],
    )?;
    let history: Option<usize> = r.get("history", a.history.map(Some), None)?;
    let dyna_path = r.path("dyna_weights", a.dyna_weights.clone(), cli.out_dir.join("planner.bin"))?;
    let static_path = r.path("static_weights", a.static_weights.clone(), cli.out_dir.join("planner-static.bin"))?;
    let out = r.path("out", a.out.clone(), cli.out_dir.join("eval"))?;
    let mut inputs = Vec::new();
    let mut specs = Vec::new();
    for id in &ids {
        let learned = |path: &Path, name: &str| -> Result<PlannerSpec> {
            let w = read_planner(path)?;
            if let Some(l) = history {
                if w.arch.history != l {
                    bail!("configuration error: {} was trained with L = {}, evaluation asks L = {l}", path.display(), w.arch.history);
                }
            }
            Ok(PlannerSpec::Learned { id: name.into(), weights: Arc::new(w) })
        };
        specs.push(match id {
            PlannerId::Dyna => {
                inputs.push(dyna_path.clone());
                learned(&dyna_path, "dyna")?
            }
            PlannerId::StaticAblation => {
                inputs.push(static_path.clone());
                learned(&static_path, "static-ablation")?
            }
            PlannerId::Dwa => PlannerSpec::Dwa(bench::DwaConfig::default()),
            PlannerId::Random => PlannerSpec::Random,
        });
    }
    let env_dir: Option<PathBuf> = r
        .get("env_dir", a.env_dir.as_ref().map(|p| Some(p.display().to_string())), None)?
        .map(PathBuf::from);
    let envs = match &env_dir {
        Some(d) => load_envs(d)?,
        None => bench::generate_envs(&EnvGenConfig {
            count: r.get("envs", a.envs, 20)?,
            seed: r.get("env_seed", a.env_seed, 0)?,
            ..EnvGenConfig::default()
        })?,
    };
    let d = TrialConfig::default();
    let tcfg = TrialConfig {
        timeout: r.get("timeout", a.timeout, d.timeout)?,
        safety: SafetyConfig { enabled: r.flag("safety", a.safety, false)?, ..SafetyConfig::default() },
        ..d
    };
    let trials = r.get("trials", a.trials, 3)?;
    let seed = r.get("seed", a.seed, 0)?;
    let eval = bench::evaluate(&specs, &envs, trials, seed, &tcfg)?;
    std::fs::create_dir_all(out.join("envs")).with_context(|| format!("cannot create {}", out.display()))?;
    let mut m = RunManifest::new("evaluate", r.resolved);
    m.seeds.insert("trials".into(), seed);
    for p in &inputs {
        m.input(p)?;
    }
    for e in &envs {
        let p = out.join("envs").join(format!("{}.toml", e.id));
        e.write(&p)?;
        m.output(&p)?;
    }
    bench::write_evaluation(&out, &eval)?;
    m.output(&out.join("metrics.tsv"))?;
    m.output(&out.join("trials.toml"))?;
    let consistent = eval.metrics.iter().all(|pm| {
        let n = eval.trials.iter().filter(|t| t.planner_id == pm.planner_id).count();
        let s = eval.trials.iter().filter(|t| t.planner_id == pm.planner_id && t.success).count();
        n == envs.len() * trials && pm.successes == s
    });
    let valid = eval.trials.iter().all(|t| !(t.success && (t.collision || t.timeout)) && t.time.is_some() == t.success);
    m.audit("rates-recomputable", consistent, format!("{} trials", eval.trials.len()));
    m.audit("outcome-exclusive", valid, "");
    print!("{}", bench::metrics_table(&eval.metrics));
    m.write_beside(&out.join("metrics.tsv"))?;
    Ok(m)
}

fn viz_halluc(cli: &Cli, a: &VizArgs) -> Result<RunManifest> {
    let mut r = Resolver::load(cli.config.as_deref(), "viz-halluc")?;
    let plans_path = r.path("plans", a.plans.clone(), cli.out_dir.join("plans.bin"))?;
    let enc_path = r.path("encoder", a.encoder.clone(), cli.out_dir.join("encoder.bin"))?;
    let count = r.get("count", a.count, 1)?;
    let samples = r.get("samples", a.samples, 1)?;
    let stat = r.flag("static", a.static_obstacles, false)?;
    let seed = r.get("seed", a.seed, 0)?;
    let out = r.path("out", a.out.clone(), cli.out_dir.join("viz"))?;
    let plans = read_plans(&plans_path)?;
    let w = read_encoder(&enc_path)?;
    if count == 0 || count > plans.len() {
        bail!("--count must be in 1..={} for {}", plans.len(), plans_path.display());
    }
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut m = RunManifest::new("viz-halluc", r.resolved);
    m.seeds.insert("samples".into(), seed);
    m.input(&plans_path)?;
    m.input(&enc_path)?;
    let radius = hallunav::world::DEFAULT_OBSTACLE_RADIUS;
    let vcfg = hallunav::viz::VizConfig::default();
    for (i, plan) in plans.iter().take(count).enumerate() {
        for s in 0..samples {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64, s as u64]));
            let tl = halluc::sample_obstacles(plan, &w, radius, stat, &mut rng)?;
            let stem = out.join(format!("plan{i:04}-sample{s:02}"));
            let svg = stem.with_extension("svg");
            let tracks = stem.with_extension("tracks.tsv");
            std::fs::write(&svg, hallunav::viz::halluc_svg(plan, &tl.obstacles, &vcfg))?;
            std::fs::write(&tracks, hallunav::viz::tracks_text(plan, &tl.obstacles))?;
            m.output(&svg)?;
            m.output(&tracks)?;
        }
    }
    m.audit("files", m.outputs.len() == 2 * count * samples, format!("{} files", m.outputs.len()));
    m.write_beside(&out.join("index"))?;
    Ok(m)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Command::Collect(a) => collect(&cli, a),
        Command::TrainHalluc(a) => train_halluc(&cli, a),
        Command::GenDataset(a) => gen_dataset(&cli, a),
        Command::TrainPlanner(a) => train_planner(&cli, a),
        Command::Evaluate(a) => evaluate(&cli, a),
        Command::VizHalluc(a) => viz_halluc(&cli, a),
    };
    match result {
        Ok(m) if m.passed() => ExitCode::SUCCESS,
        Ok(m) => {
            for a in m.audits.iter().filter(|a| !a.passed) {
                eprintln!("audit failed: {} ({})", a.name, a.detail);
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
