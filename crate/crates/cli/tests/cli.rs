use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use hallunav::dataset::{self, Dataset};
use hallunav::halluc::EncoderWeights;
use hallunav::planner::PlannerWeights;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hallunav"));
    c.env_remove("HALLUNAV_OUT");
    c
}

fn scratch(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn run(out: &Path, args: &[&str]) -> Output {
    let o = bin().arg("--out-dir").arg(out).args(args).output().unwrap();
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

/// Small end-to-end pipeline shared by the read-only tests.
fn fixture() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let d = scratch("fixture");
        build_pipeline(&d);
        d
    })
}

fn build_pipeline(d: &Path) {
    run(d, &["collect", "--plans", "50", "--seed", "1"]);
    run(d, &["train-halluc", "--epochs", "2", "--seed", "1"]);
    run(d, &["gen-dataset", "--samples", "4", "--history", "5", "--beams", "90", "--seed", "1"]);
    run(d, &["train-planner", "--epochs", "2", "--hidden", "16", "--seed", "1"]);
}

#[test]
fn full_pipeline_produces_a_metrics_table() {
    let d = fixture();
    let o = run(
        d,
        &["evaluate", "--planner", "dyna", "--planner", "random", "--envs", "2", "--trials", "1", "--history", "5"],
    );
    let table = std::fs::read_to_string(d.join("eval/metrics.tsv")).unwrap();
    assert!(table.starts_with("# hallunav-bench-metrics v1"));
    assert!(table.contains("\ndyna\t") && table.contains("\nrandom\t"));
    assert_eq!(String::from_utf8_lossy(&o.stdout), table);
    assert_eq!(std::fs::read_dir(d.join("eval/envs")).unwrap().count(), 2);
    assert!(d.join("eval/metrics.tsv.run.toml").exists());
}

#[test]
fn every_stage_writes_a_manifest_naming_its_outputs() {
    let d = fixture();
    for (artifact, sub) in [
        ("plans.bin", "collect"),
        ("encoder.bin", "train-halluc"),
        ("dataset.bin", "gen-dataset"),
        ("planner.bin", "train-planner"),
    ] {
        let text = std::fs::read_to_string(d.join(format!("{artifact}.run.toml"))).unwrap();
        assert!(text.starts_with("# hallunav-run-manifest v1"));
        assert!(text.contains(&format!("subcommand = \"{sub}\"")));
        assert!(text.contains(artifact), "{sub} manifest does not list {artifact}");
        assert!(text.contains("tool_version"));
    }
}

#[test]
fn dataset_count_matches_plans_samples_and_horizon() {
    let d = scratch("count");
    run(&d, &["collect", "--plans", "10", "--seed", "4"]);
    run(&d, &["train-halluc", "--epochs", "1", "--seed", "4"]);
    run(&d, &["gen-dataset", "--samples", "4", "--history", "5", "--beams", "90", "--no-augment"]);
    let ds = Dataset::read(&d.join("dataset.bin")).unwrap();
    let skipped = ds.manifest.skipped_draws;
    assert_eq!(ds.len(), (10 * 4 - skipped) * 45);
    assert!(skipped < 40);
}

#[test]
fn reruns_give_identical_digests() {
    let a = scratch("det-a");
    let b = scratch("det-b");
    for d in [&a, &b] {
        run(d, &["collect", "--plans", "12", "--seed", "9"]);
        run(d, &["train-halluc", "--epochs", "1", "--seed", "9"]);
        run(d, &["gen-dataset", "--samples", "2", "--beams", "90", "--seed", "9"]);
        run(d, &["train-planner", "--epochs", "1", "--hidden", "8", "--seed", "9"]);
        run(d, &["evaluate", "--planner", "dyna", "--planner", "dwa", "--envs", "1", "--trials", "1", "--timeout", "10"]);
    }
    for f in [
        "plans.bin",
        "encoder.bin",
        "encoder.metrics.txt",
        "dataset.bin",
        "dataset.bin.manifest.toml",
        "planner.bin",
        "planner.metrics.txt",
        "eval/metrics.tsv",
        "eval/trials.toml",
    ] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn artifacts_roundtrip_byte_identically() {
    let d = fixture();
    let tmp = scratch("roundtrip");
    let plans = dataset::read_plans(&d.join("plans.bin")).unwrap();
    dataset::write_plans(&tmp.join("plans.bin"), &plans).unwrap();
    EncoderWeights::read(&d.join("encoder.bin")).unwrap().write(&tmp.join("encoder.bin")).unwrap();
    PlannerWeights::read(&d.join("planner.bin")).unwrap().write(&tmp.join("planner.bin")).unwrap();
    Dataset::read(&d.join("dataset.bin")).unwrap().write(&tmp.join("dataset.bin")).unwrap();
    for f in ["plans.bin", "encoder.bin", "planner.bin", "dataset.bin", "dataset.bin.manifest.toml"] {
        assert_eq!(std::fs::read(d.join(f)).unwrap(), std::fs::read(tmp.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_input_names_the_path() {
    let d = scratch("missing");
    let o = bin()
        .arg("--out-dir")
        .arg(&d)
        .args(["train-halluc", "--plans", "/no/such/plans.bin"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/plans.bin"));
}

#[test]
fn corrupt_input_is_rejected_with_its_path() {
    let d = scratch("corrupt");
    let p = d.join("plans.bin");
    std::fs::write(&p, b"not a plan file").unwrap();
    let o = bin().arg("--out-dir").arg(&d).arg("train-halluc").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains(&p.display().to_string()));
}

#[test]
fn history_mismatch_is_a_configuration_error() {
    let d = fixture();
    let o = bin()
        .arg("--out-dir")
        .arg(d)
        .args(["train-planner", "--history", "3", "--epochs", "1", "--out"])
        .arg(scratch("mismatch").join("p.bin"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("configuration error"));

    let o = bin()
        .arg("--out-dir")
        .arg(d)
        .args(["evaluate", "--planner", "dyna", "--history", "10", "--envs", "1", "--out"])
        .arg(scratch("mismatch-eval"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("configuration error"));
}

#[test]
fn flags_override_the_config_file() {
    let d = scratch("config");
    let cfg = d.join("run.toml");
    std::fs::write(&cfg, "[collect]\nplans = 7\nseed = 3\nhorizon = 40\n").unwrap();
    run(&d, &["--config", cfg.to_str().unwrap(), "collect", "--plans", "5"]);
    let plans = dataset::read_plans(&d.join("plans.bin")).unwrap();
    assert_eq!(plans.len(), 5);
    assert!(plans.iter().all(|p| p.len() == 40));
    let m = std::fs::read_to_string(d.join("plans.bin.run.toml")).unwrap();
    assert!(m.contains("plans = 5") && m.contains("seed = 3") && m.contains("horizon = 40"));
}

#[test]
fn resolved_defaults_are_recorded() {
    let d = scratch("defaults");
    run(&d, &["collect", "--plans", "3"]);
    let m = std::fs::read_to_string(d.join("plans.bin.run.toml")).unwrap();
    assert!(m.contains("horizon = ") && m.contains("seed = "));
}

#[test]
fn environment_variable_sets_the_output_directory() {
    let d = scratch("envvar");
    let o = bin()
        .env("HALLUNAV_OUT", &d)
        .args(["collect", "--plans", "2"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(d.join("plans.bin").exists());
}

#[test]
fn viz_writes_one_graphic_and_one_track_file_per_sample() {
    let d = fixture();
    let out = scratch("viz");
    run(d, &["viz-halluc", "--count", "1", "--samples", "1", "--out", out.to_str().unwrap()]);
    let files: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(files.iter().filter(|f| f.ends_with(".svg")).count(), 1);
    assert_eq!(files.iter().filter(|f| f.ends_with(".tracks.tsv")).count(), 1);
    let svg = std::fs::read_to_string(out.join("plan0000-sample00.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("class=\"plan\""));

    let out = scratch("viz-many");
    run(d, &["viz-halluc", "--count", "2", "--samples", "3", "--static", "--out", out.to_str().unwrap()]);
    assert_eq!(std::fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg")).count(), 6);
}
