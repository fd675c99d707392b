//! Pipeline stages. Each stage writes into `<out>/<stage>/` together with
//! the resolved config and a `meta.json` that records seeds, versions and
//! SHA-256 digests of its inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gridpinn::dataset::{
    build_collocation, generate_labeled, load_dataset, save_dataset, split_by_trajectory, thin,
    DatasetMeta, SplitDataset, TableFormat, TrajectoryMember, DATASET_FORMAT_VERSION,
};
use gridpinn::evaluation::{bench_inference, evaluate, export_overlays, BenchConfig, Metrics, TimingTable};
use gridpinn::nn::{init_mlp, load_model, save_model, InputNorm, MlpModel, Provenance};
use gridpinn::sampling::sample;
use gridpinn::solver::{grid_len, integrate_adaptive, sample_on_grid, uniform_grid};
use gridpinn::training::{train, write_history, TrainingData};
use gridpinn::{Error, Result};
use ndarray::Array2;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const GENERATE: &str = "generate";
pub const TRAIN: &str = "train";
pub const EVAL: &str = "eval";
pub const BENCH: &str = "bench";
pub const SIMULATE: &str = "simulate";

pub const MODEL_FILE: &str = "model.pnnm";
const DATASET_MANIFEST: &str = "dataset.json";

#[derive(Debug, Serialize)]
struct StageMeta<'a, T: Serialize> {
    stage: &'a str,
    tool_version: &'a str,
    config_hash: String,
    seeds: BTreeMap<String, u64>,
    inputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    details: Option<T>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digests of every regular file directly inside `dir`, keyed by
/// `<stage>/<file>`.
fn hash_stage(dir: &Path, stage: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            out.insert(format!("{stage}/{name}"), sha256_hex(&bytes));
        }
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, e.into()))?;
    text.push('\n');
    write_text(path, &text)
}

fn stage_dir(out: &Path, stage: &str) -> Result<PathBuf> {
    let dir = out.join(stage);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path))
    }
}

fn finish_stage<T: Serialize>(
    dir: &Path,
    stage: &str,
    cfg: &RunConfig,
    inputs: BTreeMap<String, String>,
    details: Option<T>,
) -> Result<()> {
    let text = cfg.to_toml_string();
    write_text(&dir.join("config.toml"), &text)?;
    let meta = StageMeta {
        stage,
        tool_version: env!("CARGO_PKG_VERSION"),
        config_hash: sha256_hex(text.as_bytes()),
        seeds: cfg.seeds(),
        inputs,
        details,
    };
    write_json(&dir.join("meta.json"), &meta)
}

#[derive(Debug, Serialize)]
struct GenerateDetails {
    dataset: DatasetMeta,
    collocation_disjoint: bool,
}

/// Samples ICs, simulates ground truth, splits by trajectory, thins the
/// training split and builds collocation points from separate ICs.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let component = cfg.build_component()?;
    let domain = cfg.domain_for(&*component)?;
    let ds_cfg = &cfg.dataset;
    let seed_data = ds_cfg.seed_data.unwrap_or(cfg.seed);
    let seed_col = ds_cfg.seed_collocation.unwrap_or(cfg.seed);
    let seed_split = ds_cfg.seed_split.unwrap_or(cfg.seed);
    let ics = sample(&domain, ds_cfg.sampling, ds_cfg.n_trajectories, seed_data)?;
    let (_, points) = generate_labeled(&*component, &ics, ds_cfg.horizon_s, ds_cfg.dt_s, &cfg.solve_config())?;
    let mut ds = split_by_trajectory(&points, ds_cfg.split_ratios, seed_split)?;
    ds.train = thin(&ds.train, ds_cfg.data_stride, ds_cfg.thin_offset);
    let n_col = ds_cfg.n_collocation_trajectories.unwrap_or(ds_cfg.n_trajectories);
    let col_ics = sample(&domain, ds_cfg.sampling, n_col, seed_col)?;
    let grid = uniform_grid(0.0, ds_cfg.horizon_s, ds_cfg.dt_s);
    ds.collocation = build_collocation(&col_ics, &grid, ds_cfg.collocation_stride);
    let disjoint = col_ics.rows().into_iter().all(|c| ics.rows().into_iter().all(|l| c != l));

    let dir = stage_dir(out, GENERATE)?;
    let format = if ds_cfg.binary { TableFormat::CsvAndBinary } else { TableFormat::Csv };
    save_dataset(&ds, &dir, format)?;
    let counts = [
        ("labeled_before_thinning", points.len()),
        ("train", ds.train.len()),
        ("validation", ds.validation.len()),
        ("test", ds.test.len()),
        ("collocation", ds.collocation.len()),
        ("train_trajectories", ds.train_ids().len()),
        ("validation_trajectories", ds.validation_ids().len()),
        ("test_trajectories", ds.test_ids().len()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let dataset = DatasetMeta {
        format_version: DATASET_FORMAT_VERSION,
        state_names: component.state_names(),
        domain: domain.to_map(),
        n_trajectories: ds_cfg.n_trajectories,
        horizon_s: ds_cfg.horizon_s,
        dt_s: ds_cfg.dt_s,
        grid_points: grid_len(0.0, ds_cfg.horizon_s, ds_cfg.dt_s),
        data_stride: ds_cfg.data_stride,
        collocation_stride: ds_cfg.collocation_stride,
        thin_offset: ds_cfg.thin_offset,
        split_ratios: ds_cfg.split_ratios,
        seed_data,
        seed_collocation: seed_col,
        seed_split,
        solver: cfg.solve_config(),
        counts,
    };
    finish_stage(&dir, GENERATE, cfg, BTreeMap::new(), Some(GenerateDetails { dataset, collocation_disjoint: disjoint }))?;
    Ok(dir)
}

fn load_generated(out: &Path) -> Result<(SplitDataset, BTreeMap<String, String>)> {
    let dir = out.join(GENERATE);
    require(dir.join(DATASET_MANIFEST))?;
    let ds = load_dataset(&dir)?;
    Ok((ds, hash_stage(&dir, GENERATE)?))
}

fn load_trained(out: &Path) -> Result<(MlpModel, BTreeMap<String, String>)> {
    let path = require(out.join(TRAIN).join(MODEL_FILE))?;
    let model = load_model(&path)?;
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mut inputs = BTreeMap::new();
    inputs.insert(format!("{TRAIN}/{MODEL_FILE}"), sha256_hex(&bytes));
    Ok((model, inputs))
}

#[derive(Debug, Serialize)]
struct TrainDetails {
    epochs_run: usize,
    best_epoch: usize,
    best_val_mse: f64,
    stopped_early: bool,
    n_params: usize,
}

/// Trains the surrogate on the generated dataset.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let (ds, inputs) = load_generated(out)?;
    let component = cfg.build_component()?;
    let domain = cfg.domain_for(&*component)?;
    let data = TrainingData::from_split(&ds, &*component)?;
    let init = init_mlp(&cfg.layer_dims(component.state_dim()), cfg.network.seed.unwrap_or(cfg.seed))?
        .with_activation(cfg.network.activation)
        .with_norm(InputNorm::from_domain(&domain, cfg.dataset.horizon_s)?)?;
    let outcome = train(&cfg.training, &data, &*component, init)?;
    let mut model = outcome.model;
    model.provenance = Provenance {
        config_hash: sha256_hex(cfg.to_toml_string().as_bytes()),
        component: cfg.component_name().into(),
        seeds: cfg.seeds(),
        epochs_run: outcome.history.len(),
    };

    let dir = stage_dir(out, TRAIN)?;
    save_model(&model, &dir.join(MODEL_FILE))?;
    write_history(&outcome.history, &dir.join("history.csv"))?;
    let details = TrainDetails {
        epochs_run: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        best_val_mse: outcome.best_val_mse,
        stopped_early: outcome.stopped_early,
        n_params: model.n_params(),
    };
    finish_stage(&dir, TRAIN, cfg, inputs, Some(details))?;
    Ok(dir)
}

/// First `n` distinct test-trajectory ICs in ascending id order.
fn test_ics(ds: &SplitDataset, n: usize) -> Array2<f64> {
    let mut seen = BTreeMap::new();
    for p in &ds.test {
        seen.entry(p.trajectory_id()).or_insert_with(|| p.x0.clone());
    }
    let rows: Vec<Vec<f64>> = seen.into_values().take(n).collect();
    let mut ics = Array2::zeros((rows.len(), ds.state_dim));
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            ics[[i, j]] = *v;
        }
    }
    ics
}

/// Accuracy metrics on the test split plus overlay and error-curve files.
pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<Metrics> {
    let (model, mut inputs) = load_trained(out)?;
    let (ds, data_inputs) = load_generated(out)?;
    inputs.extend(data_inputs);
    let component = cfg.build_component()?;
    let metrics = evaluate(&model, &ds.test, &component.state_names())?;

    let dir = stage_dir(out, EVAL)?;
    write_text(&dir.join("metrics.txt"), &metrics.report())?;
    write_text(&dir.join("metrics.csv"), &metrics.table_csv())?;
    write_text(&dir.join("per_timestep.csv"), &metrics.timestep_csv())?;
    write_json(&dir.join("metrics.json"), &metrics)?;
    let n = cfg.evaluation.overlay_count;
    if n > 0 {
        let ics = test_ics(&ds, n);
        if ics.nrows() > 0 {
            export_overlays(
                &model,
                &*component,
                ics.view(),
                cfg.dataset.horizon_s,
                cfg.dataset.dt_s,
                &cfg.solve_config(),
                &dir.join("overlays"),
            )?;
        }
    }
    finish_stage::<()>(&dir, EVAL, cfg, inputs, None)?;
    Ok(metrics)
}

/// Solver versus surrogate inference time for the configured IC counts.
pub fn cmd_bench(cfg: &RunConfig, out: &Path) -> Result<TimingTable> {
    let (model, inputs) = load_trained(out)?;
    let component = cfg.build_component()?;
    let domain = cfg.domain_for(&*component)?;
    let n_max = cfg.evaluation.bench_sizes.iter().copied().max().unwrap_or(0);
    let table = if n_max == 0 {
        TimingTable::default()
    } else {
        let ics = sample(&domain, cfg.dataset.sampling, n_max, cfg.evaluation.seed_bench.unwrap_or(cfg.seed))?;
        let bench = BenchConfig {
            sizes: cfg.evaluation.bench_sizes.clone(),
            repeats: cfg.evaluation.bench_repeats,
            horizon: cfg.dataset.horizon_s,
            dt: cfg.dataset.dt_s,
            solver: cfg.solve_config(),
        };
        bench_inference(&model, &*component, ics.view(), &bench)?
    };

    let dir = stage_dir(out, BENCH)?;
    write_text(&dir.join("timing.csv"), &table.to_csv())?;
    write_text(&dir.join("timing.txt"), &table.report())?;
    write_json(&dir.join("timing.json"), &table)?;
    finish_stage::<()>(&dir, BENCH, cfg, inputs, None)?;
    Ok(table)
}

/// Solves one trajectory from `x0` (the domain midpoint when absent) and
/// writes it on the output grid.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path, x0: Option<&[f64]>) -> Result<PathBuf> {
    let component = cfg.build_component()?;
    let domain = cfg.domain_for(&*component)?;
    let x0: Vec<f64> = match x0 {
        Some(x) => x.to_vec(),
        None => domain.bounds().iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect(),
    };
    if x0.len() != component.state_dim() {
        return Err(Error::config("--x0", format!("expected {} values, got {}", component.state_dim(), x0.len())));
    }
    let sol = integrate_adaptive(&*component, &x0, &cfg.solve_config())?;
    let traj = sample_on_grid(&sol, cfg.dataset.dt_s)?;

    let dir = stage_dir(out, SIMULATE)?;
    let path = dir.join("trajectory.csv");
    let mut text = String::from("t");
    for name in component.state_names() {
        text.push(',');
        text.push_str(&name);
    }
    text.push('\n');
    for (t, row) in traj.times.iter().zip(traj.states.rows()) {
        text.push_str(&t.to_string());
        for v in row {
            text.push(',');
            text.push_str(&v.to_string());
        }
        text.push('\n');
    }
    write_text(&path, &text)?;
    let details: BTreeMap<&str, Vec<f64>> = [("x0", x0)].into_iter().collect();
    finish_stage(&dir, SIMULATE, cfg, BTreeMap::new(), Some(details))?;
    Ok(path)
}
