use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gridpinn::Error;
use gridpinn_cli::{cmd_bench, cmd_eval, cmd_generate, cmd_simulate, cmd_train, RunConfig};

const SMALL: &[&str] = &[
    "dataset.n_trajectories=10",
    "dataset.horizon_s=0.2",
    "dataset.dt_s=0.01",
    "dataset.data_stride=3",
    "dataset.collocation_stride=4",
    "network.hidden=[8, 8]",
    "training.epochs=4",
    "training.optimizer=\"adam\"",
    "evaluation.bench_sizes=[1, 3]",
    "evaluation.bench_repeats=3",
    "evaluation.overlay_count=1",
];

fn small_config(extra: &[&str]) -> RunConfig {
    let ov: Vec<String> = SMALL.iter().chain(extra).map(|s| s.to_string()).collect();
    RunConfig::load(Some("sm9.reference"), &ov, Some(11)).unwrap()
}

fn gridpinn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridpinn")).args(args).output().unwrap()
}

fn small_args<'a>(cmd: &'a str, out: &'a str) -> Vec<String> {
    let mut v: Vec<String> = [cmd, "--config", "sm9.reference", "--out", out, "--threads", "1"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for s in SMALL {
        v.push("--set".into());
        v.push(s.to_string());
    }
    v
}

fn run(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    gridpinn(&refs)
}

#[test]
fn eval_before_train_is_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(&[]);
    assert!(matches!(cmd_eval(&cfg, dir.path()), Err(Error::MissingArtifact(_))));
    assert!(matches!(cmd_train(&cfg, dir.path()), Err(Error::MissingArtifact(_))));
    assert!(matches!(cmd_bench(&cfg, dir.path()), Err(Error::MissingArtifact(_))));
}

#[test]
fn exit_codes_and_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&small_args("eval", out));
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error code=3 kind=missing_artifact "), "{err}");

    let o = gridpinn(&["generate", "--config", "sm9.reference", "--out", out, "--set", "dataset.bogus=1"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("kind=config_error") && err.contains("bogus"), "{err}");

    let o = gridpinn(&["generate", "--config", "missing.toml", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert!(run(&small_args("generate", out)).status.success());
    let mut args = small_args("train", out);
    args.extend(["--set".into(), "training.learning_rate=1e9".into(), "--set".into(), "training.divergence_factor=1.5".into()]);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn generate_twice_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small_config(&[]);
    cmd_generate(&cfg, a.path()).unwrap();
    cmd_generate(&cfg, b.path()).unwrap();
    let fa = read_all(&a.path().join("generate"));
    assert_eq!(fa.len(), 11);
    assert_eq!(fa, read_all(&b.path().join("generate")));
}

#[test]
fn full_pipeline_writes_stage_directories() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = small_config(&[]);
    cmd_generate(&cfg, out).unwrap();
    cmd_train(&cfg, out).unwrap();
    let metrics = cmd_eval(&cfg, out).unwrap();
    assert!(metrics.mae > 0.0 && metrics.mae <= metrics.max_ae);
    let table = cmd_bench(&cfg, out).unwrap();
    assert_eq!(table.rows.len(), 4);
    let traj = cmd_simulate(&cfg, out, None).unwrap();
    assert_eq!(fs::read_to_string(traj).unwrap().lines().count(), 22);

    for stage in ["generate", "train", "eval", "bench", "simulate"] {
        let d = out.join(stage);
        let resolved = fs::read_to_string(d.join("config.toml")).unwrap();
        assert_eq!(RunConfig::from_toml_str(&resolved).unwrap(), cfg, "{stage}");
        let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("meta.json")).unwrap()).unwrap();
        assert_eq!(meta["stage"], stage);
        assert_eq!(meta["seeds"]["global"], 11);
    }
    let train_meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("train/meta.json")).unwrap()).unwrap();
    let digest = gridpinn_cli::pipeline::sha256_hex(&fs::read(out.join("generate/train.csv")).unwrap());
    assert_eq!(train_meta["inputs"]["generate/train.csv"], digest.as_str());
    assert!(out.join("eval/overlays/overlay_0.csv").exists());
    assert!(out.join("eval/overlays/error_curve.csv").exists());
    let model = gridpinn::nn::load_model(&out.join("train/model.pnnm")).unwrap();
    assert_eq!(model.provenance.component, "sm9");
    assert_eq!(model.provenance.epochs_run, 4);
}

#[test]
fn simulate_accepts_explicit_state() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = small_args("simulate", out);
    args.push("--x0=0.5,0.1,1.0,0,1.08,1,1.105,0.7048,0.7048".into());
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("simulate/trajectory.csv")).unwrap();
    let first: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first, vec![0.0, 0.5, 0.1, 1.0, 0.0, 1.08, 1.0, 1.105, 0.7048, 0.7048]);

    let mut bad = small_args("simulate", out);
    bad.push("--x0=1,2".into());
    assert_eq!(run(&bad).status.code(), Some(2));
}
