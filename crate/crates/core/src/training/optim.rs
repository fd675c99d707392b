use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

/// Bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: grads.len() });
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with a strong-Wolfe line search.
#[derive(Debug, Clone)]
pub struct Lbfgs {
    pub memory: usize,
    pub lr: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_trials: usize,
    history: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    iterations: usize,
}

/// Objective returning `(loss, gradient)`.
pub type Objective<'a> = dyn FnMut(&[f64]) -> Result<(f64, Vec<f64>)> + 'a;

impl Lbfgs {
    pub fn new(memory: usize, lr: f64) -> Self {
        Self {
            memory: memory.max(1),
            lr,
            c1: 1e-4,
            c2: 0.9,
            max_trials: 20,
            history: VecDeque::new(),
            iterations: 0,
        }
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = g.to_vec();
        let mut alphas = Vec::with_capacity(self.history.len());
        for (s, y, rho) in self.history.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.history.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in self.history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }

    /// One outer iteration from `params` with known `(loss, grad)`.
    /// Returns the new loss and gradient; `params` is updated in place.
    pub fn step(
        &mut self,
        params: &mut Vec<f64>,
        loss: f64,
        grad: &[f64],
        objective: &mut Objective<'_>,
    ) -> Result<(f64, Vec<f64>)> {
        if grad.iter().all(|g| *g == 0.0) {
            return Ok((loss, grad.to_vec()));
        }
        let mut d = self.direction(grad);
        let mut slope = dot(grad, &d);
        if !(slope < 0.0) {
            self.history.clear();
            d = grad.iter().map(|g| -g).collect();
            slope = dot(grad, &d);
        }
        let alpha0 = if self.iterations == 0 {
            let l1: f64 = grad.iter().map(|g| g.abs()).sum();
            (1.0f64).min(1.0 / l1) * self.lr
        } else {
            self.lr
        };
        let (alpha, new_loss, new_grad) = self.line_search(params, loss, slope, &d, alpha0, objective)?;
        let s: Vec<f64> = d.iter().map(|v| alpha * v).collect();
        let y: Vec<f64> = new_grad.iter().zip(grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if self.history.len() == self.memory {
                self.history.pop_front();
            }
            self.history.push_back((s.clone(), y, 1.0 / sy));
        } else {
            self.history.clear();
        }
        for (p, si) in params.iter_mut().zip(&s) {
            *p += si;
        }
        self.iterations += 1;
        Ok((new_loss, new_grad))
    }

    fn line_search(
        &self,
        x: &[f64],
        f0: f64,
        g0: f64,
        d: &[f64],
        alpha0: f64,
        objective: &mut Objective<'_>,
    ) -> Result<(f64, f64, Vec<f64>)> {
        let mut trials = 0;
        let mut eval = |alpha: f64, trials: &mut usize| -> Result<(f64, f64, Vec<f64>)> {
            *trials += 1;
            let xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
            let (f, g) = objective(&xt)?;
            let slope = dot(&g, d);
            Ok((f, slope, g))
        };
        let (mut a_prev, mut f_prev, mut s_prev) = (0.0, f0, g0);
        let mut g_prev: Option<Vec<f64>> = None;
        let mut alpha = alpha0;
        let bracket;
        loop {
            if trials >= self.max_trials {
                return Err(Error::LineSearchFailed { trials });
            }
            let (f, s, g) = eval(alpha, &mut trials)?;
            if !f.is_finite() || f > f0 + self.c1 * alpha * g0 || (trials > 1 && f >= f_prev) {
                bracket = ((a_prev, f_prev, s_prev, g_prev), (alpha, f, s, Some(g)));
                break;
            }
            if s.abs() <= -self.c2 * g0 {
                return Ok((alpha, f, g));
            }
            if s >= 0.0 {
                bracket = ((alpha, f, s, Some(g)), (a_prev, f_prev, s_prev, g_prev));
                break;
            }
            a_prev = alpha;
            f_prev = f;
            s_prev = s;
            g_prev = Some(g);
            alpha *= 2.0;
        }
        // Zoom: `lo` satisfies sufficient decrease with the lowest value so far.
        let (mut lo, mut hi) = bracket;
        loop {
            if trials >= self.max_trials {
                return Err(Error::LineSearchFailed { trials });
            }
            let alpha = cubic_min(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2);
            let (f, s, g) = eval(alpha, &mut trials)?;
            if !f.is_finite() || f > f0 + self.c1 * alpha * g0 || f >= lo.1 {
                hi = (alpha, f, s, Some(g));
            } else {
                if s.abs() <= -self.c2 * g0 {
                    return Ok((alpha, f, g));
                }
                if s * (hi.0 - lo.0) >= 0.0 {
                    hi = lo;
                }
                lo = (alpha, f, s, Some(g));
            }
        }
    }
}

/// Minimizer of the cubic through two points with slopes, kept inside the
/// interval (bisection when degenerate).
fn cubic_min(a: f64, fa: f64, sa: f64, b: f64, fb: f64, sb: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let d1 = sa + sb - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - sa * sb;
    let mid = 0.5 * (lo + hi);
    if !disc.is_finite() || disc < 0.0 || !fb.is_finite() {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (sb + d2 - d1) / (sb - sa + 2.0 * d2);
    let margin = 0.1 * (hi - lo);
    if t.is_finite() && t > lo + margin && t < hi - margin {
        t
    } else {
        mid
    }
}
