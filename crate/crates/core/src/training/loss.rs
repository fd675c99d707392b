use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::component::ComponentModel;
use crate::dataset::{CollocationPoint, LabeledPoint};
use crate::error::{Error, Result};
use crate::nn::{map_shards, sum_in_order, MlpModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_d: f64,
    pub lambda_dp: f64,
    pub lambda_cp: f64,
    pub lambda_ic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_d: 1.0, lambda_dp: 0.01, lambda_cp: 0.001, lambda_ic: 0.01 }
    }
}

impl LossWeights {
    pub const DATA_ONLY: LossWeights = LossWeights { lambda_d: 1.0, lambda_dp: 0.0, lambda_cp: 0.0, lambda_ic: 0.0 };
    pub const UNIT: LossWeights = LossWeights { lambda_d: 1.0, lambda_dp: 1.0, lambda_cp: 1.0, lambda_ic: 1.0 };

    pub fn as_array(&self) -> [f64; 4] {
        [self.lambda_d, self.lambda_dp, self.lambda_cp, self.lambda_ic]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParams(format!("loss weights must be finite and >= 0: {w:?}")));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::AllTermsDisabled);
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            lambda_d: self.lambda_d * k,
            lambda_dp: self.lambda_dp * k,
            lambda_cp: self.lambda_cp * k,
            lambda_ic: self.lambda_ic * k,
        }
    }
}

/// Unweighted loss terms and their weighted sum. Terms that were skipped
/// (zero weight or empty batch) are reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_data: f64,
    pub l_physics_data: f64,
    pub l_physics_col: f64,
    pub l_ic: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [f64; 4] {
        [self.l_data, self.l_physics_data, self.l_physics_col, self.l_ic]
    }

    fn from_terms(terms: [f64; 4], w: &LossWeights) -> Self {
        let total = w.as_array().iter().zip(&terms).map(|(a, b)| a * b).sum();
        Self {
            l_data: terms[0],
            l_physics_data: terms[1],
            l_physics_col: terms[2],
            l_ic: terms[3],
            total,
        }
    }
}

/// Labeled rows `[x0.., t]` with targets `x` and the limit-aware field
/// `f(t, x)` at the targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub f_targets: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollocationBatch {
    pub inputs: Array2<f64>,
}

/// Rows `[x0.., 0]` with targets `x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct IcBatch {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

fn input_row(x0: &[f64], t: f64) -> impl Iterator<Item = f64> + '_ {
    x0.iter().copied().chain(std::iter::once(t))
}

fn select_rows(a: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    a.select(Axis(0), idx)
}

impl LabeledBatch {
    pub fn from_points(points: &[LabeledPoint], component: &dyn ComponentModel) -> Result<Self> {
        let d = component.state_dim();
        let n = points.len();
        let mut inputs = Vec::with_capacity(n * (d + 1));
        let mut targets = Vec::with_capacity(n * d);
        let mut f = vec![0.0; n * d];
        for (p, fr) in points.iter().zip(f.chunks_exact_mut(d.max(1))) {
            if p.x.len() != d || p.x0.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: p.x.len() });
            }
            inputs.extend(input_row(&p.x0, p.t));
            targets.extend_from_slice(&p.x);
            component.rhs_limited(p.t, &p.x, fr)?;
        }
        Ok(Self {
            inputs: Array2::from_shape_vec((n, d + 1), inputs).expect("shape"),
            targets: Array2::from_shape_vec((n, d), targets).expect("shape"),
            f_targets: Array2::from_shape_vec((n, d), f).expect("shape"),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            inputs: select_rows(&self.inputs, idx),
            targets: select_rows(&self.targets, idx),
            f_targets: select_rows(&self.f_targets, idx),
        }
    }
}

impl CollocationBatch {
    pub fn from_points(points: &[CollocationPoint], state_dim: usize) -> Result<Self> {
        let mut inputs = Vec::with_capacity(points.len() * (state_dim + 1));
        for p in points {
            if p.x0.len() != state_dim {
                return Err(Error::DimensionMismatch { expected: state_dim, got: p.x0.len() });
            }
            inputs.extend(input_row(&p.x0, p.t));
        }
        Ok(Self { inputs: Array2::from_shape_vec((points.len(), state_dim + 1), inputs).expect("shape") })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self { inputs: select_rows(&self.inputs, idx) }
    }
}

impl IcBatch {
    /// One row per initial state (rows of `x0s`).
    pub fn from_initial_states(x0s: ArrayView2<f64>) -> Self {
        let (n, d) = x0s.dim();
        let mut inputs = Array2::zeros((n, d + 1));
        inputs.slice_mut(s![.., ..d]).assign(&x0s);
        Self { inputs, targets: x0s.to_owned() }
    }

    /// Distinct initial states of a collocation set, in order of appearance.
    pub fn from_collocation(points: &[CollocationPoint], state_dim: usize) -> Self {
        let mut rows: Vec<f64> = Vec::new();
        let mut last: Option<usize> = None;
        let mut seen = std::collections::BTreeSet::new();
        for p in points {
            if last != Some(p.trajectory_id) && seen.insert(p.trajectory_id) {
                rows.extend_from_slice(&p.x0);
            }
            last = Some(p.trajectory_id);
        }
        let n = rows.len() / state_dim.max(1);
        let x0s = Array2::from_shape_vec((n, state_dim), rows).expect("shape");
        Self::from_initial_states(x0s.view())
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self { inputs: select_rows(&self.inputs, idx), targets: select_rows(&self.targets, idx) }
    }
}

/// The three batches one loss evaluation runs on.
#[derive(Debug, Clone, Copy)]
pub struct LossBatches<'a> {
    pub labeled: &'a LabeledBatch,
    pub collocation: &'a CollocationBatch,
    pub ic: &'a IcBatch,
}

struct ShardOut {
    sse: [f64; 2],
    grad: Option<Vec<f64>>,
}

fn sse(a: &Array2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_denominator(n: usize, d: usize) -> f64 {
    (n * d) as f64
}

/// Data and physics-data terms share one forward pass on the labeled rows.
fn labeled_terms(
    model: &MlpModel,
    batch: &LabeledBatch,
    w: &LossWeights,
    want_grad: bool,
) -> Result<([f64; 2], Option<Vec<f64>>)> {
    let (n, d) = batch.targets.dim();
    let with_dot = w.lambda_dp > 0.0;
    let denom = mean_denominator(n, d);
    let parts = map_shards(n, |r| {
        let tape = model.forward_tape(batch.inputs.slice(s![r.clone(), ..]), with_dot)?;
        let x = batch.targets.slice(s![r.clone(), ..]);
        let mut out = ShardOut { sse: [0.0; 2], grad: None };
        if w.lambda_d > 0.0 {
            out.sse[0] = sse(&tape.output, x);
        }
        let resid = tape.output_dot.as_ref().map(|yd| yd - &batch.f_targets.slice(s![r.clone(), ..]));
        if let Some(res) = &resid {
            out.sse[1] = res.iter().map(|v| v * v).sum();
        }
        if want_grad {
            let y_bar = (w.lambda_d > 0.0).then(|| (&tape.output - &x) * (2.0 * w.lambda_d / denom));
            let yd_bar = resid.map(|res| res * (2.0 * w.lambda_dp / denom));
            out.grad = Some(model.backward(&tape, y_bar.as_ref(), yd_bar.as_ref())?);
        }
        Ok(out)
    })?;
    Ok(reduce(parts, denom))
}

fn collocation_term(
    model: &MlpModel,
    component: &dyn ComponentModel,
    batch: &CollocationBatch,
    w: &LossWeights,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let n = batch.len();
    let d = model.output_dim();
    let denom = mean_denominator(n, d);
    let t_col = d;
    let parts = map_shards(n, |r| {
        let inputs = batch.inputs.slice(s![r.clone(), ..]);
        let tape = model.forward_tape(inputs, true)?;
        let y_dot = tape.output_dot.as_ref().expect("tangent");
        let rows = tape.output.nrows();
        let mut resid = Array2::zeros((rows, d));
        let mut y_bar = Array2::zeros((rows, d));
        let mut f = vec![0.0; d];
        let mut jac = vec![0.0; d * d];
        for i in 0..rows {
            let y = tape.output.row(i);
            let y = y.as_slice().expect("contiguous rows");
            component.rhs_limited_jacobian(inputs[[i, t_col]], y, &mut f, &mut jac)?;
            for k in 0..d {
                resid[[i, k]] = y_dot[[i, k]] - f[k];
            }
            if want_grad {
                // d r / d y = -J, so y_bar = -J^T r (scaled below).
                for j in 0..d {
                    let mut acc = 0.0;
                    for k in 0..d {
                        acc += jac[k * d + j] * resid[[i, k]];
                    }
                    y_bar[[i, j]] = -acc;
                }
            }
        }
        let mut out = ShardOut { sse: [resid.iter().map(|v| v * v).sum(), 0.0], grad: None };
        if want_grad {
            let scale = 2.0 * w.lambda_cp / denom;
            let yd_bar = resid * scale;
            let y_bar = y_bar * scale;
            out.grad = Some(model.backward(&tape, Some(&y_bar), Some(&yd_bar))?);
        }
        Ok(out)
    })?;
    let (sse, grad) = reduce(parts, denom);
    Ok((sse[0], grad))
}

fn ic_term(model: &MlpModel, batch: &IcBatch, w: &LossWeights, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    let (n, d) = batch.targets.dim();
    let denom = mean_denominator(n, d);
    let parts = map_shards(n, |r| {
        let tape = model.forward_tape(batch.inputs.slice(s![r.clone(), ..]), false)?;
        let x0 = batch.targets.slice(s![r.clone(), ..]);
        let mut out = ShardOut { sse: [sse(&tape.output, x0), 0.0], grad: None };
        if want_grad {
            let y_bar = (&tape.output - &x0) * (2.0 * w.lambda_ic / denom);
            out.grad = Some(model.backward(&tape, Some(&y_bar), None)?);
        }
        Ok(out)
    })?;
    let (sse, grad) = reduce(parts, denom);
    Ok((sse[0], grad))
}

fn reduce(parts: Vec<ShardOut>, denom: f64) -> ([f64; 2], Option<Vec<f64>>) {
    let mut sse = [0.0; 2];
    let mut grads = Vec::with_capacity(parts.len());
    for p in parts {
        sse[0] += p.sse[0];
        sse[1] += p.sse[1];
        if let Some(g) = p.grad {
            grads.push(g);
        }
    }
    ([sse[0] / denom, sse[1] / denom], sum_in_order(grads))
}

/// Weighted loss and, optionally, its gradient with respect to the flat
/// model parameters.
pub fn loss_and_grad(
    model: &MlpModel,
    component: &dyn ComponentModel,
    batches: LossBatches<'_>,
    weights: &LossWeights,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
    weights.validate()?;
    let mut terms = [0.0; 4];
    let mut grads: Vec<Vec<f64>> = Vec::new();
    let mut active = false;
    if (weights.lambda_d > 0.0 || weights.lambda_dp > 0.0) && !batches.labeled.is_empty() {
        active = true;
        let (l, g) = labeled_terms(model, batches.labeled, weights, want_grad)?;
        terms[0] = if weights.lambda_d > 0.0 { l[0] } else { 0.0 };
        terms[1] = l[1];
        grads.extend(g);
    }
    if weights.lambda_cp > 0.0 && !batches.collocation.is_empty() {
        active = true;
        let (l, g) = collocation_term(model, component, batches.collocation, weights, want_grad)?;
        terms[2] = l;
        grads.extend(g);
    }
    if weights.lambda_ic > 0.0 && !batches.ic.is_empty() {
        active = true;
        let (l, g) = ic_term(model, batches.ic, weights, want_grad)?;
        terms[3] = l;
        grads.extend(g);
    }
    if !active {
        return Err(Error::AllTermsDisabled);
    }
    let breakdown = LossBreakdown::from_terms(terms, weights);
    if breakdown.terms().iter().any(|v| !v.is_finite()) || !breakdown.total.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: None });
    }
    let grad = if want_grad { sum_in_order(grads) } else { None };
    Ok((breakdown, grad))
}

pub fn total_loss(
    model: &MlpModel,
    component: &dyn ComponentModel,
    batches: LossBatches<'_>,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    Ok(loss_and_grad(model, component, batches, weights, false)?.0)
}

fn single_term(
    model: &MlpModel,
    component: &dyn ComponentModel,
    batches: LossBatches<'_>,
    weights: LossWeights,
    pick: usize,
) -> Result<f64> {
    let empty = match pick {
        0 | 1 => batches.labeled.is_empty(),
        2 => batches.collocation.is_empty(),
        _ => batches.ic.is_empty(),
    };
    if empty {
        return Err(Error::EmptyBatch);
    }
    Ok(total_loss(model, component, batches, &weights)?.terms()[pick])
}

fn empty_batches(d: usize) -> (LabeledBatch, CollocationBatch, IcBatch) {
    (
        LabeledBatch { inputs: Array2::zeros((0, d + 1)), targets: Array2::zeros((0, d)), f_targets: Array2::zeros((0, d)) },
        CollocationBatch { inputs: Array2::zeros((0, d + 1)) },
        IcBatch { inputs: Array2::zeros((0, d + 1)), targets: Array2::zeros((0, d)) },
    )
}

/// Mean squared error of predictions against labels.
pub fn loss_data(model: &MlpModel, batch: &LabeledBatch) -> Result<f64> {
    let (_, c, i) = empty_batches(model.output_dim());
    let lin = crate::component::LinearModel::new(Array2::zeros((model.output_dim(), model.output_dim())))?;
    let w = LossWeights::DATA_ONLY;
    single_term(model, &lin, LossBatches { labeled: batch, collocation: &c, ic: &i }, w, 0)
}

/// Mean squared residual `d x_hat/dt - f(t, x)` at the labeled states.
pub fn loss_physics_data(model: &MlpModel, batch: &LabeledBatch) -> Result<f64> {
    let (_, c, i) = empty_batches(model.output_dim());
    let lin = crate::component::LinearModel::new(Array2::zeros((model.output_dim(), model.output_dim())))?;
    let w = LossWeights { lambda_d: 0.0, lambda_dp: 1.0, lambda_cp: 0.0, lambda_ic: 0.0 };
    single_term(model, &lin, LossBatches { labeled: batch, collocation: &c, ic: &i }, w, 1)
}

/// Mean squared residual `d x_hat/dt - f(t, x_hat)` at collocation inputs.
pub fn loss_physics_col(model: &MlpModel, component: &dyn ComponentModel, batch: &CollocationBatch) -> Result<f64> {
    let (l, _, i) = empty_batches(model.output_dim());
    let w = LossWeights { lambda_d: 0.0, lambda_dp: 0.0, lambda_cp: 1.0, lambda_ic: 0.0 };
    single_term(model, component, LossBatches { labeled: &l, collocation: batch, ic: &i }, w, 2)
}

/// Mean squared mismatch `x_hat(x0, 0) - x0`.
pub fn loss_ic(model: &MlpModel, batch: &IcBatch) -> Result<f64> {
    let (l, c, _) = empty_batches(model.output_dim());
    let lin = crate::component::LinearModel::new(Array2::zeros((model.output_dim(), model.output_dim())))?;
    let w = LossWeights { lambda_d: 0.0, lambda_dp: 0.0, lambda_cp: 0.0, lambda_ic: 1.0 };
    single_term(model, &lin, LossBatches { labeled: &l, collocation: &c, ic: batch }, w, 3)
}
