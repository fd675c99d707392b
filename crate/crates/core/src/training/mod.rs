//! Hybrid data/physics loss and the optimization loop.

mod loss;
mod optim;

pub use loss::{
    loss_and_grad, loss_data, loss_ic, loss_physics_col, loss_physics_data, total_loss, CollocationBatch, IcBatch,
    LabeledBatch, LossBatches, LossBreakdown, LossWeights,
};
pub use optim::{adam_step, AdamConfig, AdamState, Lbfgs, Objective};

use std::cell::Cell;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::s;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::component::ComponentModel;
use crate::dataset::SplitDataset;
use crate::error::{Error, Result};
use crate::nn::{map_shards, MlpModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Lbfgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Labeled rows per optimizer step; 0 means full batch.
    pub batch_size: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub weights: LossWeights,
    /// Seed for mini-batch shuffling.
    pub seed: u64,
    pub lbfgs_memory: usize,
    /// Abort when the loss exceeds this multiple of its first value.
    pub divergence_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 750,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 0,
            patience: 50,
            min_delta: 1e-7,
            weights: LossWeights::default(),
            seed: 0,
            lbfgs_memory: 10,
            divergence_factor: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParams("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParams("learning_rate must be > 0".into()));
        }
        if self.min_delta.is_nan() || self.min_delta < 0.0 {
            return Err(Error::InvalidParams("min_delta must be >= 0".into()));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::InvalidParams("divergence_factor must be > 1".into()));
        }
        self.weights.validate()
    }
}

/// Everything `train` consumes, as dense batches.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub labeled: LabeledBatch,
    pub collocation: CollocationBatch,
    pub ic: IcBatch,
    pub validation: LabeledBatch,
}

impl TrainingData {
    /// Training labels from `train`, physics points from `collocation`,
    /// initial-condition rows from the distinct collocation ICs.
    pub fn from_split(ds: &SplitDataset, component: &dyn ComponentModel) -> Result<Self> {
        let d = component.state_dim();
        Ok(Self {
            labeled: LabeledBatch::from_points(&ds.train, component)?,
            collocation: CollocationBatch::from_points(&ds.collocation, d)?,
            ic: IcBatch::from_collocation(&ds.collocation, d),
            validation: LabeledBatch::from_points(&ds.validation, component)?,
        })
    }

    pub fn batches(&self) -> LossBatches<'_> {
        LossBatches { labeled: &self.labeled, collocation: &self.collocation, ic: &self.ic }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub val_mse: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
}

/// Mean squared error of the model over a labeled batch.
pub fn mse(model: &MlpModel, batch: &LabeledBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let parts = map_shards(batch.len(), |r| {
        let y = model.forward_batch(batch.inputs.slice(s![r.clone(), ..]))?;
        let x = batch.targets.slice(s![r, ..]);
        Ok(y.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
    })?;
    Ok(parts.iter().sum::<f64>() / batch.targets.len() as f64)
}

/// Splits `0..n` into `k` contiguous chunks whose sizes differ by at most 1.
fn chunk_bounds(n: usize, k: usize) -> Vec<std::ops::Range<usize>> {
    (0..k).map(|i| (i * n / k)..((i + 1) * n / k)).collect()
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let k = parts.len() as f64;
    let mut acc = LossBreakdown::default();
    for p in parts {
        acc.l_data += p.l_data;
        acc.l_physics_data += p.l_physics_data;
        acc.l_physics_col += p.l_physics_col;
        acc.l_ic += p.l_ic;
        acc.total += p.total;
    }
    LossBreakdown {
        l_data: acc.l_data / k,
        l_physics_data: acc.l_physics_data / k,
        l_physics_col: acc.l_physics_col / k,
        l_ic: acc.l_ic / k,
        total: acc.total / k,
    }
}

fn tag_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { epoch: Some(epoch) },
        other => other,
    }
}

/// Runs the optimizer for up to `config.epochs` epochs, tracking the
/// validation MSE and restoring the parameters of the best epoch.
pub fn train(
    config: &TrainConfig,
    data: &TrainingData,
    component: &dyn ComponentModel,
    init: MlpModel,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.labeled.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut model = init;
    let mut params = model.params();
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut initial_total: Option<f64> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut stopped_early = false;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(params.len());
    let adam_cfg = AdamConfig::new(config.learning_rate);
    let mut lbfgs = Lbfgs::new(config.lbfgs_memory, config.learning_rate);
    let mut lbfgs_point: Option<(f64, Vec<f64>, LossBreakdown)> = None;
    let n_lab = data.labeled.len();
    let mini = config.optimizer == OptimizerKind::Adam && config.batch_size > 0 && config.batch_size < n_lab;

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let breakdown = match config.optimizer {
            OptimizerKind::Adam if mini => {
                let n_steps = n_lab.div_ceil(config.batch_size);
                let mut lab: Vec<usize> = (0..n_lab).collect();
                let mut col: Vec<usize> = (0..data.collocation.len()).collect();
                let mut ic: Vec<usize> = (0..data.ic.len()).collect();
                lab.shuffle(&mut rng);
                col.shuffle(&mut rng);
                ic.shuffle(&mut rng);
                let (lr, cr, ir) = (
                    chunk_bounds(lab.len(), n_steps),
                    chunk_bounds(col.len(), n_steps),
                    chunk_bounds(ic.len(), n_steps),
                );
                let mut parts = Vec::with_capacity(n_steps);
                for k in 0..n_steps {
                    let lb = data.labeled.select(&lab[lr[k].clone()]);
                    let cb = data.collocation.select(&col[cr[k].clone()]);
                    let ib = data.ic.select(&ic[ir[k].clone()]);
                    let batches = LossBatches { labeled: &lb, collocation: &cb, ic: &ib };
                    model.set_params(&params)?;
                    let (bd, g) = loss_and_grad(&model, component, batches, &config.weights, true)
                        .map_err(|e| tag_epoch(e, epoch))?;
                    adam_step(&mut params, &g.expect("gradient"), &mut adam, &adam_cfg)?;
                    parts.push(bd);
                }
                mean_breakdown(&parts)
            }
            OptimizerKind::Adam => {
                model.set_params(&params)?;
                let (bd, g) = loss_and_grad(&model, component, data.batches(), &config.weights, true)
                    .map_err(|e| tag_epoch(e, epoch))?;
                adam_step(&mut params, &g.expect("gradient"), &mut adam, &adam_cfg)?;
                bd
            }
            OptimizerKind::Lbfgs => {
                let mut probe = model.clone();
                let last_bd = Cell::new(LossBreakdown::default());
                let mut objective = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
                    probe.set_params(p)?;
                    match loss_and_grad(&probe, component, data.batches(), &config.weights, true) {
                        Ok((bd, g)) => {
                            last_bd.set(bd);
                            Ok((bd.total, g.expect("gradient")))
                        }
                        // A trial step into a non-finite region is rejected by the line search.
                        Err(Error::NonFiniteLoss { .. }) => Ok((f64::INFINITY, vec![0.0; p.len()])),
                        Err(e) => Err(e),
                    }
                };
                let (f0, g0, bd0) = match lbfgs_point.take() {
                    Some(pt) => pt,
                    None => {
                        let (f, g) = objective(&params)?;
                        if !f.is_finite() {
                            return Err(Error::NonFiniteLoss { epoch: Some(epoch) });
                        }
                        (f, g, last_bd.get())
                    }
                };
                let (f1, g1) = lbfgs.step(&mut params, f0, &g0, &mut objective)?;
                drop(objective);
                lbfgs_point = Some((f1, g1, last_bd.get()));
                bd0
            }
        };
        if !breakdown.total.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: Some(epoch) });
        }
        let initial = *initial_total.get_or_insert(breakdown.total);
        if breakdown.total > config.divergence_factor * initial {
            return Err(Error::OptimizerDiverged { epoch, loss: breakdown.total, initial });
        }
        model.set_params(&params)?;
        let val = if data.validation.is_empty() { breakdown.total } else { mse(&model, &data.validation)? };
        if !val.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: Some(epoch) });
        }
        let improved = epoch == 1 || val < best_val - config.min_delta;
        if improved {
            best_val = val;
            best_epoch = epoch;
            best_params.clone_from(&params);
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.push(EpochRecord {
            epoch,
            loss: breakdown,
            val_mse: val,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if since_best >= config.patience {
            stopped_early = epoch < config.epochs;
            break;
        }
    }
    model.set_params(&best_params)?;
    model.provenance.epochs_run = history.len();
    Ok(TrainOutcome { model, history, best_epoch, best_val_mse: best_val, stopped_early })
}

pub const HISTORY_HEADER: &str = "epoch,l_data,l_physics_data,l_physics_col,l_ic,total,val_mse,wall_ms";

pub fn write_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut out = String::with_capacity(64 * (history.len() + 1));
    out.push_str(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        let l = &r.loss;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.3}\n",
            r.epoch, l.l_data, l.l_physics_data, l.l_physics_col, l.l_ic, l.total, r.val_mse, r.wall_ms
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub weights: LossWeights,
    /// Unweighted terms after the data-only pilot.
    pub pilot: LossBreakdown,
    /// Terms that evaluated to zero; their weight defaults to 1.
    pub zero_terms: Vec<&'static str>,
}

/// Power-of-ten balancing against the data term:
/// `lambda_i = 10^round(log10(l_data / l_i))`, `lambda_d = 1`.
pub fn suggest_weights(terms: &LossBreakdown) -> (LossWeights, Vec<&'static str>) {
    let mut zero = Vec::new();
    let mut pick = |l: f64, name: &'static str| {
        if l == 0.0 || terms.l_data == 0.0 {
            zero.push(name);
            1.0
        } else {
            10f64.powi((terms.l_data / l).log10().round() as i32)
        }
    };
    let w = LossWeights {
        lambda_d: 1.0,
        lambda_dp: pick(terms.l_physics_data, "l_physics_data"),
        lambda_cp: pick(terms.l_physics_col, "l_physics_col"),
        lambda_ic: pick(terms.l_ic, "l_ic"),
    };
    (w, zero)
}

/// Trains with the data term only for the pilot epochs, then evaluates all
/// four terms unweighted and balances them against `l_data`.
pub fn calibrate_loss_weights(
    pilot: &TrainConfig,
    data: &TrainingData,
    component: &dyn ComponentModel,
    init: MlpModel,
) -> Result<Calibration> {
    let cfg = TrainConfig { weights: LossWeights::DATA_ONLY, ..pilot.clone() };
    let outcome = train(&cfg, data, component, init)?;
    let terms = total_loss(&outcome.model, component, data.batches(), &LossWeights::UNIT)?;
    let (weights, zero_terms) = suggest_weights(&terms);
    Ok(Calibration { weights, pilot: terms, zero_terms })
}
