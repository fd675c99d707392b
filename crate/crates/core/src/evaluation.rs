//! Accuracy metrics against solver ground truth, inference timing and
//! overlay export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::component::ComponentModel;
use crate::dataset::LabeledPoint;
use crate::error::{Error, Result};
use crate::nn::MlpModel;
use crate::solver::{integrate_adaptive, sample_on_grid, uniform_grid, SolveConfig, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mae: f64,
    pub mse: f64,
    pub max_ae: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimestepError {
    pub t: f64,
    pub mae: f64,
    pub max_ae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
    pub max_ae: f64,
    pub n_points: usize,
    pub per_state: BTreeMap<String, ErrorStats>,
    pub per_timestep: Vec<TimestepError>,
}

struct Acc {
    abs: f64,
    sq: f64,
    max: f64,
    n: usize,
}

impl Acc {
    fn new() -> Self {
        Self { abs: 0.0, sq: 0.0, max: 0.0, n: 0 }
    }

    fn push(&mut self, e: f64) {
        let a = e.abs();
        self.abs += a;
        self.sq += a * a;
        self.max = self.max.max(a);
        self.n += 1;
    }

    fn stats(&self) -> ErrorStats {
        let n = self.n.max(1) as f64;
        ErrorStats { mae: self.abs / n, mse: self.sq / n, max_ae: self.max }
    }
}

/// Pools `|pred - truth|` over all rows and columns; `times[i]` is the
/// elapsed time of row `i`.
pub fn compute_metrics(
    pred: ArrayView2<f64>,
    truth: ArrayView2<f64>,
    times: &[f64],
    state_names: &[String],
) -> Result<Metrics> {
    if pred.dim() != truth.dim() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: pred.len() });
    }
    if times.len() != truth.nrows() {
        return Err(Error::DimensionMismatch { expected: truth.nrows(), got: times.len() });
    }
    if state_names.len() != truth.ncols() {
        return Err(Error::DimensionMismatch { expected: truth.ncols(), got: state_names.len() });
    }
    if truth.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut all = Acc::new();
    let mut per_state: Vec<Acc> = (0..truth.ncols()).map(|_| Acc::new()).collect();
    let mut per_t: BTreeMap<u64, Acc> = BTreeMap::new();
    for ((p, x), &t) in pred.rows().into_iter().zip(truth.rows()).zip(times) {
        let acc_t = per_t.entry(t.to_bits()).or_insert_with(Acc::new);
        for (j, (a, b)) in p.iter().zip(x.iter()).enumerate() {
            let e = a - b;
            all.push(e);
            per_state[j].push(e);
            acc_t.push(e);
        }
    }
    let overall = all.stats();
    let mut per_timestep: Vec<TimestepError> = per_t
        .iter()
        .map(|(bits, acc)| {
            let st = acc.stats();
            TimestepError { t: f64::from_bits(*bits), mae: st.mae, max_ae: st.max_ae }
        })
        .collect();
    per_timestep.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(Metrics {
        mae: overall.mae,
        mse: overall.mse,
        max_ae: overall.max_ae,
        n_points: truth.nrows(),
        per_state: state_names.iter().cloned().zip(per_state.iter().map(Acc::stats)).collect(),
        per_timestep,
    })
}

/// Runs the surrogate on every labeled test point and compares against the
/// stored solver states.
pub fn evaluate(model: &MlpModel, test: &[LabeledPoint], state_names: &[String]) -> Result<Metrics> {
    let d = model.output_dim();
    if test.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut inputs = Array2::zeros((test.len(), d + 1));
    let mut truth = Array2::zeros((test.len(), d));
    let mut times = Vec::with_capacity(test.len());
    for (i, p) in test.iter().enumerate() {
        if p.x0.len() != d || p.x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: p.x.len() });
        }
        for j in 0..d {
            inputs[[i, j]] = p.x0[j];
            truth[[i, j]] = p.x[j];
        }
        inputs[[i, d]] = p.t;
        times.push(p.t);
    }
    let pred = model.predict(inputs.view())?;
    compute_metrics(pred.view(), truth.view(), &times, state_names)
}

impl Metrics {
    /// Human-readable summary.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "points   {}", self.n_points);
        let _ = writeln!(s, "MAE      {:.6e}", self.mae);
        let _ = writeln!(s, "MSE      {:.6e}", self.mse);
        let _ = writeln!(s, "MaxAE    {:.6e}", self.max_ae);
        let _ = writeln!(s, "\n{:<12} {:>14} {:>14} {:>14}", "state", "MAE", "MSE", "MaxAE");
        for (name, st) in &self.per_state {
            let _ = writeln!(s, "{:<12} {:>14.6e} {:>14.6e} {:>14.6e}", name, st.mae, st.mse, st.max_ae);
        }
        s
    }

    /// `state,mae,mse,max_ae` rows, with an `all` row first.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("state,mae,mse,max_ae\n");
        let _ = writeln!(s, "all,{},{},{}", self.mae, self.mse, self.max_ae);
        for (name, st) in &self.per_state {
            let _ = writeln!(s, "{name},{},{},{}", st.mae, st.mse, st.max_ae);
        }
        s
    }

    pub fn timestep_csv(&self) -> String {
        let mut s = String::from("t,mae,max_ae\n");
        for r in &self.per_timestep {
            let _ = writeln!(s, "{},{},{}", r.t, r.mae, r.max_ae);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Solver,
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: Method,
    pub n_trajectories: usize,
    /// Median over the repeats.
    pub wall_ms: f64,
    pub repeats: usize,
    pub min_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingTable {
    pub rows: Vec<TimingRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub horizon: f64,
    pub dt: f64,
    pub solver: SolveConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { sizes: vec![1, 50, 500], repeats: 5, horizon: 1.0, dt: 1e-3, solver: SolveConfig::default() }
    }
}

fn time_ms<F: FnMut() -> Result<()>>(repeats: usize, mut f: F) -> Result<(f64, f64, f64)> {
    f()?;
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        f()?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let median = if n % 2 == 1 { samples[n / 2] } else { 0.5 * (samples[n / 2 - 1] + samples[n / 2]) };
    Ok((median.max(f64::MIN_POSITIVE), samples[0], samples[n - 1]))
}

/// Surrogate inputs `[x0.., t]` for every IC row paired with every grid time.
pub fn grid_inputs(ics: ArrayView2<f64>, times: &[f64]) -> Array2<f64> {
    let (n, d) = ics.dim();
    let mut inputs = Array2::zeros((n * times.len(), d + 1));
    for (i, x0) in ics.rows().into_iter().enumerate() {
        for (k, &t) in times.iter().enumerate() {
            let r = i * times.len() + k;
            inputs.slice_mut(s![r, ..d]).assign(&x0);
            inputs[[r, d]] = t;
        }
    }
    inputs
}

/// Median wall time of (a) sequential solver runs over the first `n` ICs and
/// (b) one batched surrogate pass over all their grid points, for each size.
/// One warm-up run precedes every measurement.
pub fn bench_inference(
    model: &MlpModel,
    component: &dyn ComponentModel,
    ics: ArrayView2<f64>,
    cfg: &BenchConfig,
) -> Result<TimingTable> {
    let mut table = TimingTable::default();
    if cfg.sizes.is_empty() || ics.nrows() == 0 {
        return Ok(table);
    }
    if cfg.repeats < 3 {
        return Err(Error::InvalidParams("benchmark needs at least 3 repeats".into()));
    }
    let solve_cfg = SolveConfig { t_span: [0.0, cfg.horizon], ..cfg.solver };
    let times = uniform_grid(0.0, cfg.horizon, cfg.dt);
    for &n in &cfg.sizes {
        if n == 0 || n > ics.nrows() {
            return Err(Error::InvalidParams(format!("benchmark size {n} exceeds {} available ICs", ics.nrows())));
        }
        let sub = ics.slice(s![..n, ..]);
        let (med, lo, hi) = time_ms(cfg.repeats, || {
            for x0 in sub.rows() {
                let sol = integrate_adaptive(component, &x0.to_vec(), &solve_cfg)?;
                std::hint::black_box(sample_on_grid(&sol, cfg.dt)?);
            }
            Ok(())
        })?;
        table.rows.push(TimingRow { method: Method::Solver, n_trajectories: n, wall_ms: med, repeats: cfg.repeats, min_ms: lo, max_ms: hi });
        let (med, lo, hi) = time_ms(cfg.repeats, || {
            let inputs = grid_inputs(sub, &times);
            std::hint::black_box(model.predict(inputs.view())?);
            Ok(())
        })?;
        table.rows.push(TimingRow { method: Method::Surrogate, n_trajectories: n, wall_ms: med, repeats: cfg.repeats, min_ms: lo, max_ms: hi });
    }
    Ok(table)
}

impl TimingTable {
    pub fn get(&self, method: Method, n: usize) -> Option<&TimingRow> {
        self.rows.iter().find(|r| r.method == method && r.n_trajectories == n)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,n_trajectories,wall_ms,repeats,min_ms,max_ms\n");
        for r in &self.rows {
            let m = match r.method {
                Method::Solver => "solver",
                Method::Surrogate => "surrogate",
            };
            let _ = writeln!(s, "{m},{},{:.4},{},{:.4},{:.4}", r.n_trajectories, r.wall_ms, r.repeats, r.min_ms, r.max_ms);
        }
        s
    }

    /// Method rows against trajectory-count columns, in milliseconds.
    pub fn report(&self) -> String {
        let mut sizes: Vec<usize> = self.rows.iter().map(|r| r.n_trajectories).collect();
        sizes.dedup();
        let mut s = format!("{:<10}", "method");
        for n in &sizes {
            let _ = write!(s, " {:>22}", format!("{n} traj (ms)"));
        }
        s.push('\n');
        for (label, m) in [("solver", Method::Solver), ("surrogate", Method::Surrogate)] {
            let _ = write!(s, "{label:<10}");
            for &n in &sizes {
                match self.get(m, n) {
                    Some(r) => {
                        let _ = write!(s, " {:>22}", format!("{:.3} [{:.3}-{:.3}]", r.wall_ms, r.min_ms, r.max_ms));
                    }
                    None => {
                        let _ = write!(s, " {:>22}", "-");
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Writes `overlay_<k>.csv` (columns `t, x_true_1.., x_pred_1..`) for every
/// IC and an `error_curve.csv` with per-timestep MAE and MaxAE over all of
/// them.
pub fn export_overlays(
    model: &MlpModel,
    component: &dyn ComponentModel,
    ics: ArrayView2<f64>,
    horizon: f64,
    dt: f64,
    solver: &SolveConfig,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if ics.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = component.state_dim();
    let cfg = SolveConfig { t_span: [0.0, horizon], ..*solver };
    let mut files = Vec::with_capacity(ics.nrows() + 1);
    let mut all_pred = Vec::new();
    let mut all_true = Vec::new();
    let mut all_t = Vec::new();
    for (k, x0) in ics.rows().into_iter().enumerate() {
        let x0 = x0.to_vec();
        let sol = integrate_adaptive(component, &x0, &cfg)?;
        let traj: Trajectory = sample_on_grid(&sol, dt)?;
        let inputs = grid_inputs(ndarray::ArrayView2::from_shape((1, d), &x0).expect("row"), &traj.times);
        let pred = model.predict(inputs.view())?;
        let mut text = String::from("t");
        for i in 1..=d {
            let _ = write!(text, ",x_true_{i}");
        }
        for i in 1..=d {
            let _ = write!(text, ",x_pred_{i}");
        }
        text.push('\n');
        for (r, &t) in traj.times.iter().enumerate() {
            let _ = write!(text, "{t}");
            for v in traj.states.row(r) {
                let _ = write!(text, ",{v}");
            }
            for v in pred.row(r) {
                let _ = write!(text, ",{v}");
            }
            text.push('\n');
        }
        let path = dir.join(format!("overlay_{k}.csv"));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        files.push(path);
        all_pred.extend(pred.iter().copied());
        all_true.extend(traj.states.iter().copied());
        all_t.extend_from_slice(&traj.times);
    }
    let n = all_t.len();
    let pred = Array2::from_shape_vec((n, d), all_pred).expect("shape");
    let truth = Array2::from_shape_vec((n, d), all_true).expect("shape");
    let metrics = compute_metrics(pred.view(), truth.view(), &all_t, &component.state_names())?;
    let path = dir.join("error_curve.csv");
    fs::write(&path, metrics.timestep_csv()).map_err(|e| Error::io(&path, e))?;
    files.push(path);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn names(d: usize) -> Vec<String> {
        (1..=d).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let m = compute_metrics(x.view(), x.view(), &[0.0, 0.1], &names(2)).unwrap();
        assert_eq!((m.mae, m.mse, m.max_ae), (0.0, 0.0, 0.0));
    }

    #[test]
    fn single_error() {
        let m = compute_metrics(array![[1.5]].view(), array![[1.0]].view(), &[0.0], &names(1)).unwrap();
        assert_eq!((m.mae, m.mse, m.max_ae), (0.5, 0.25, 0.5));
        assert_eq!(m.per_timestep, vec![TimestepError { t: 0.0, mae: 0.5, max_ae: 0.5 }]);
    }

    #[test]
    fn dimension_mismatch() {
        let r = compute_metrics(array![[1.0, 2.0]].view(), array![[1.0]].view(), &[0.0], &names(1));
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn per_timestep_groups_by_time() {
        let pred = array![[1.0], [2.0], [0.0]];
        let truth = array![[0.0], [0.0], [0.0]];
        let m = compute_metrics(pred.view(), truth.view(), &[0.0, 0.0, 0.5], &names(1)).unwrap();
        assert_eq!(m.per_timestep.len(), 2);
        assert_eq!(m.per_timestep[0].mae, 1.5);
        assert_eq!(m.per_timestep[0].max_ae, 2.0);
        assert_eq!(m.per_timestep[1].mae, 0.0);
    }

    proptest! {
        #[test]
        fn metric_algebra(errs in proptest::collection::vec(-5.0..5.0f64, 1..60)) {
            let n = errs.len();
            let pred = Array2::from_shape_vec((n, 1), errs.clone()).unwrap();
            let truth = Array2::zeros((n, 1));
            let times: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let m = compute_metrics(pred.view(), truth.view(), &times, &names(1)).unwrap();
            prop_assert!(m.mae <= m.max_ae + 1e-15);
            prop_assert!(m.mse <= m.max_ae * m.max_ae + 1e-12);
            prop_assert!(m.mse + 1e-12 >= m.mae * m.mae);
            let mut rev = errs.clone();
            rev.reverse();
            let pr = Array2::from_shape_vec((n, 1), rev).unwrap();
            let tr: Vec<f64> = times.iter().rev().copied().collect();
            let m2 = compute_metrics(pr.view(), truth.view(), &tr, &names(1)).unwrap();
            prop_assert!((m.mae - m2.mae).abs() <= 1e-12 * m.mae.max(1.0));
            prop_assert!((m.mse - m2.mse).abs() <= 1e-12 * m.mse.max(1.0));
            prop_assert_eq!(m.max_ae, m2.max_ae);
        }
    }
}
