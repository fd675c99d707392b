//! Explicit Runge-Kutta integration of component models.
//!
//! [`integrate_adaptive`] runs Dormand-Prince 5(4) with error control and
//! keeps a per-step interpolant; [`sample_on_grid`] resamples that dense
//! solution onto a uniform grid. [`integrate_fixed_rk4`] is a constant-step
//! reference used to check convergence order.

mod tableau;

pub use tableau::{A as DOPRI_A, B as DOPRI_B, C as DOPRI_C, E as DOPRI_E};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::component::{check_dim, ComponentModel, Limit};
use crate::error::{Error, Result};
use tableau::{A, C, D, E};

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const MAX_STEPS: usize = 10_000_000;

/// Tolerances and span for one integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub rtol: f64,
    pub atol: f64,
    pub t_span: [f64; 2],
    /// Upper bound on the step; `None` means the whole span.
    pub max_step: Option<f64>,
    /// Fixed first step; `None` selects it automatically.
    pub initial_step: Option<f64>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-7,
            atol: 1e-9,
            t_span: [0.0, 1.0],
            max_step: None,
            initial_step: None,
        }
    }
}

impl SolveConfig {
    pub fn with_span(t0: f64, t_end: f64) -> Self {
        Self {
            t_span: [t0, t_end],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSolveConfig(m));
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return bad(format!("tolerances must be positive (rtol {}, atol {})", self.rtol, self.atol));
        }
        let [t0, t1] = self.t_span;
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return bad(format!("t_end must exceed t0, got [{t0}, {t1}]"));
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0) {
                return bad(format!("max_step must be positive, got {h}"));
            }
        }
        if let Some(h) = self.initial_step {
            if !(h > 0.0) {
                return bad(format!("initial_step must be positive, got {h}"));
            }
        }
        Ok(())
    }
}

/// One accepted step with its interpolation coefficients.
#[derive(Debug, Clone)]
struct DenseStep {
    t0: f64,
    h: f64,
    y0: Vec<f64>,
    // y(t0 + θh) = y0 + θ(r1 + (1-θ)(r2 + θ(r3 + (1-θ) r4)))
    r: [Vec<f64>; 4],
}

impl DenseStep {
    fn eval(&self, theta: f64, out: &mut [f64]) {
        let th1 = 1.0 - theta;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.y0[i]
                + theta
                    * (self.r[0][i]
                        + th1 * (self.r[1][i] + theta * (self.r[2][i] + th1 * self.r[3][i])));
        }
    }
}

/// Accepted steps of an adaptive integration plus their interpolants.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    t_span: [f64; 2],
    x0: Vec<f64>,
    steps: Vec<DenseStep>,
    limits: Vec<Limit>,
    n_rejected: usize,
    n_rhs: usize,
}

impl DenseSolution {
    pub fn state_dim(&self) -> usize {
        self.x0.len()
    }

    pub fn t_span(&self) -> [f64; 2] {
        self.t_span
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn n_rejected(&self) -> usize {
        self.n_rejected
    }

    pub fn n_rhs_evals(&self) -> usize {
        self.n_rhs
    }

    /// Times at the end of each accepted step, preceded by `t0`.
    pub fn step_times(&self) -> Vec<f64> {
        std::iter::once(self.t_span[0])
            .chain(self.steps.iter().map(|s| s.t0 + s.h))
            .collect()
    }

    /// Interpolated state at `t`, clamped to the span and to state limits.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.state_dim()];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::EmptySolution);
        }
        let t = t.clamp(self.t_span[0], self.t_span[1]);
        if t == self.t_span[0] {
            out.copy_from_slice(&self.x0);
            return Ok(());
        }
        let k = self
            .steps
            .partition_point(|s| s.t0 + s.h < t)
            .min(self.steps.len() - 1);
        let step = &self.steps[k];
        let theta = ((t - step.t0) / step.h).clamp(0.0, 1.0);
        step.eval(theta, out);
        for (x, lim) in out.iter_mut().zip(&self.limits) {
            if let Some((lo, hi)) = lim {
                *x = x.clamp(*lo, *hi);
            }
        }
        Ok(())
    }
}

/// A solution sampled on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub trajectory_id: usize,
    pub x0: Vec<f64>,
    pub times: Vec<f64>,
    /// `times.len() x state_dim`
    pub states: Array2<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.x0.len()
    }
}

/// Number of points on a grid `t0, t0 + dt, ...` that fits into the span.
pub fn grid_len(t0: f64, t_end: f64, dt: f64) -> usize {
    ((t_end - t0) / dt + 1e-9).floor() as usize + 1
}

/// Grid times computed as `t0 + i*dt` (no accumulation), last point snapped
/// into the span.
pub fn uniform_grid(t0: f64, t_end: f64, dt: f64) -> Vec<f64> {
    let n = grid_len(t0, t_end, dt);
    (0..n).map(|i| (t0 + i as f64 * dt).min(t_end)).collect()
}

fn limited_rhs(
    model: &dyn ComponentModel,
    t: f64,
    x: &[f64],
    out: &mut [f64],
    scratch: &mut [f64],
) -> Result<()> {
    model.rhs(t, x, out)?;
    scratch.copy_from_slice(x);
    model.apply_limits(scratch, out);
    Ok(())
}

fn check_state(t: f64, x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFiniteState { index, t }),
        None => Ok(()),
    }
}

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], cfg: &SolveConfig) -> f64 {
    let n = err.len() as f64;
    let s: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = cfg.atol + cfg.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

fn initial_step(
    model: &dyn ComponentModel,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    cfg: &SolveConfig,
    h_max: f64,
    scratch: &mut [f64],
) -> Result<f64> {
    // Hairer, Nørsett & Wanner, "Solving ODEs I", II.4 (order 5).
    let sc: Vec<f64> = y0.iter().map(|y| cfg.atol + cfg.rtol * y.abs()).collect();
    let rms = |v: &[f64]| -> f64 {
        (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    };
    let d0 = rms(y0);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    }
    .min(h_max);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; y0.len()];
    limited_rhs(model, t0 + h0, &y1, &mut f1, scratch)?;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    Ok((100.0 * h0).min(h1).min(h_max))
}

/// Dormand-Prince 5(4) with standard weighted-RMS error control. Limited
/// states are clamped (with anti-windup) at every stage evaluation and after
/// each accepted step.
pub fn integrate_adaptive(
    model: &dyn ComponentModel,
    x0: &[f64],
    cfg: &SolveConfig,
) -> Result<DenseSolution> {
    cfg.validate()?;
    let n = model.state_dim();
    check_dim(n, x0.len())?;
    let [t0, t_end] = cfg.t_span;
    check_state(t0, x0)?;

    let span = t_end - t0;
    let h_max = cfg.max_step.unwrap_or(span).min(span);
    let h_min = 1e-14 * span;

    let mut scratch = vec![0.0; n];
    let mut y = x0.to_vec();
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
    limited_rhs(model, t0, &y, &mut k[0], &mut scratch)?;
    let mut n_rhs = 1;

    let mut h = match cfg.initial_step {
        Some(h) => h.min(h_max),
        None => {
            n_rhs += 1;
            initial_step(model, t0, &y, &k[0].clone(), cfg, h_max, &mut scratch)?
        }
    };

    let mut t = t0;
    let mut steps = Vec::new();
    let mut n_rejected = 0;
    let mut last_rejected = false;
    let mut y_stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];

    while t < t_end {
        if steps.len() + n_rejected > MAX_STEPS {
            return Err(Error::StepSizeUnderflow { t, h });
        }
        if h < h_min {
            return Err(Error::StepSizeUnderflow { t, h });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }

        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += A[s][j] * k[j][i];
                }
                y_stage[i] = y[i] + h * acc;
            }
            if s == 6 {
                y_new.copy_from_slice(&y_stage);
            }
            limited_rhs(model, t + C[s] * h, &y_stage, &mut k[s], &mut scratch)?;
        }
        n_rhs += 6;

        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..7 {
                acc += E[j] * k[j][i];
            }
            err[i] = h * acc;
        }
        let err_norm = error_norm(&err, &y, &y_new, cfg);
        if !err_norm.is_finite() {
            check_state(t + h, &y_new)?;
        }

        if err_norm <= 1.0 {
            let t_new = if last { t_end } else { t + h };

            let mut clamped = false;
            for (i, lim) in model.limits().iter().enumerate() {
                if let Some((lo, hi)) = lim {
                    let c = y_new[i].clamp(*lo, *hi);
                    if c != y_new[i] {
                        y_new[i] = c;
                        clamped = true;
                    }
                }
            }
            check_state(t_new, &y_new)?;
            if clamped {
                limited_rhs(model, t_new, &y_new, &mut k[6], &mut scratch)?;
                n_rhs += 1;
            }

            let mut r: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
            for i in 0..n {
                let ydiff = y_new[i] - y[i];
                let bspl = h * k[0][i] - ydiff;
                r[0][i] = ydiff;
                r[1][i] = bspl;
                r[2][i] = ydiff - h * k[6][i] - bspl;
                let mut acc = 0.0;
                for j in 0..7 {
                    acc += D[j] * k[j][i];
                }
                r[3][i] = h * acc;
            }
            steps.push(DenseStep {
                t0: t,
                h,
                y0: y.clone(),
                r,
            });

            t = t_new;
            y.copy_from_slice(&y_new);
            let k6 = k[6].clone();
            k[0].copy_from_slice(&k6);

            let mut fac = if err_norm == 0.0 {
                FAC_MAX
            } else {
                (SAFETY * err_norm.powf(-0.2)).clamp(FAC_MIN, FAC_MAX)
            };
            if last_rejected {
                fac = fac.min(1.0);
            }
            last_rejected = false;
            h = (h * fac).min(h_max);
        } else {
            n_rejected += 1;
            last_rejected = true;
            let fac = (SAFETY * err_norm.powf(-0.2)).clamp(FAC_MIN, 1.0);
            h *= fac;
        }
    }

    Ok(DenseSolution {
        t_span: cfg.t_span,
        x0: x0.to_vec(),
        steps,
        limits: model.limits(),
        n_rejected,
        n_rhs,
    })
}

/// Evaluates the dense solution on `t0, t0 + dt, ..., t_end`. Row 0 is the
/// initial state exactly.
pub fn sample_on_grid(sol: &DenseSolution, dt: f64) -> Result<Trajectory> {
    if sol.steps.is_empty() {
        return Err(Error::EmptySolution);
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidSolveConfig(format!("dt must be positive, got {dt}")));
    }
    let [t0, t_end] = sol.t_span;
    let times = uniform_grid(t0, t_end, dt);
    let d = sol.state_dim();
    let mut states = Array2::zeros((times.len(), d));
    let mut buf = vec![0.0; d];
    for (i, &t) in times.iter().enumerate() {
        sol.eval_into(t, &mut buf)?;
        states.row_mut(i).assign(&ndarray::ArrayView1::from(&buf));
    }
    Ok(Trajectory {
        trajectory_id: 0,
        x0: sol.x0.clone(),
        times,
        states,
    })
}

/// Classical four-stage RK4 with constant step `h`; one output row per step.
pub fn integrate_fixed_rk4(
    model: &dyn ComponentModel,
    x0: &[f64],
    t_span: [f64; 2],
    h: f64,
) -> Result<Trajectory> {
    if !(h > 0.0) {
        return Err(Error::InvalidSolveConfig(format!("step must be positive, got {h}")));
    }
    let n = model.state_dim();
    check_dim(n, x0.len())?;
    let [t0, t_end] = t_span;
    let n_steps = ((t_end - t0) / h).round().max(1.0) as usize;
    let h = (t_end - t0) / n_steps as f64;

    let mut states = Array2::zeros((n_steps + 1, n));
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut y = x0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    states.row_mut(0).assign(&ndarray::ArrayView1::from(&y));
    times.push(t0);
    for step in 0..n_steps {
        let t = t0 + step as f64 * h;
        model.rhs(t, &y, &mut k1)?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        model.rhs(t + 0.5 * h, &tmp, &mut k2)?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        model.rhs(t + 0.5 * h, &tmp, &mut k3)?;
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        model.rhs(t + h, &tmp, &mut k4)?;
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t_next = t0 + (step + 1) as f64 * h;
        check_state(t_next, &y)?;
        states.row_mut(step + 1).assign(&ndarray::ArrayView1::from(&y));
        times.push(t_next);
    }
    Ok(Trajectory {
        trajectory_id: 0,
        x0: x0.to_vec(),
        times,
        states,
    })
}

/// Adaptive solve followed by uniform resampling.
pub fn simulate(
    model: &dyn ComponentModel,
    x0: &[f64],
    cfg: &SolveConfig,
    dt: f64,
) -> Result<Trajectory> {
    let sol = integrate_adaptive(model, x0, cfg)?;
    sample_on_grid(&sol, dt)
}
