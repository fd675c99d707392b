//! Dynamic component models: an ODE right-hand side, its state layout and
//! optional per-state actuator limits.

mod linear;
pub mod sm9;

pub use linear::{linear_test_rhs, LinearModel};
pub use sm9::{SmParams, SmState, Sm9Model, VqSign};

use crate::autodiff::Dual;
use crate::error::{Error, Result};

/// Closed interval a state is confined to.
pub type Limit = Option<(f64, f64)>;

pub trait ComponentModel: Send + Sync {
    fn state_dim(&self) -> usize;

    fn state_names(&self) -> Vec<String>;

    /// Unclamped right-hand side `dx/dt = f(t, x)`.
    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<()>;

    /// Same function evaluated on dual numbers.
    fn rhs_dual(&self, t: f64, x: &[Dual], dx: &mut [Dual]) -> Result<()>;

    fn limits(&self) -> Vec<Limit> {
        vec![None; self.state_dim()]
    }

    /// Clamps limited states into range and zeroes derivatives that point
    /// further out of range from a bound (anti-windup).
    fn apply_limits(&self, x: &mut [f64], dx: &mut [f64]) {
        for (i, lim) in self.limits().into_iter().enumerate() {
            if let Some((lo, hi)) = lim {
                clamp_component(&mut x[i], &mut dx[i], lo, hi);
            }
        }
    }

    /// Evaluates `f(t, x)` into `f_out` and the vector-Jacobian product
    /// `(df/dx)^T v` into `vjp_out`, one dual pass per state.
    fn rhs_vjp(
        &self,
        t: f64,
        x: &[f64],
        v: &[f64],
        f_out: &mut [f64],
        vjp_out: &mut [f64],
    ) -> Result<()> {
        let d = self.state_dim();
        check_dim(d, x.len())?;
        check_dim(d, v.len())?;
        let mut xd: Vec<Dual> = x.iter().map(|&xi| Dual::constant(xi)).collect();
        let mut out = vec![Dual::constant(0.0); d];
        for j in 0..d {
            xd[j].dot = 1.0;
            self.rhs_dual(t, &xd, &mut out)?;
            xd[j].dot = 0.0;
            if j == 0 {
                for (f, o) in f_out.iter_mut().zip(&out) {
                    *f = o.val;
                }
            }
            vjp_out[j] = out.iter().zip(v).map(|(o, vi)| o.dot * vi).sum();
        }
        Ok(())
    }

    /// The field the solver integrates: `f(t, x)` with every derivative
    /// that pushes a limited state further out of range set to zero.
    fn rhs_limited(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<()> {
        self.rhs(t, x, dx)?;
        let mut xc = x.to_vec();
        self.apply_limits(&mut xc, dx);
        Ok(())
    }

    /// [`rhs_limited`](Self::rhs_limited) and its Jacobian (row-major
    /// `d x d`); rows of frozen derivatives are zero.
    fn rhs_limited_jacobian(&self, t: f64, x: &[f64], f_out: &mut [f64], jac: &mut [f64]) -> Result<()> {
        let d = self.state_dim();
        check_dim(d, x.len())?;
        check_dim(d * d, jac.len())?;
        let mut xd: Vec<Dual> = x.iter().map(|&xi| Dual::constant(xi)).collect();
        let mut out = vec![Dual::constant(0.0); d];
        for j in 0..d {
            xd[j].dot = 1.0;
            self.rhs_dual(t, &xd, &mut out)?;
            xd[j].dot = 0.0;
            for i in 0..d {
                jac[i * d + j] = out[i].dot;
            }
        }
        for (f, o) in f_out.iter_mut().zip(&out) {
            *f = o.val;
        }
        for (i, lim) in self.limits().into_iter().enumerate() {
            if let Some((lo, hi)) = lim {
                if (x[i] >= hi && f_out[i] > 0.0) || (x[i] <= lo && f_out[i] < 0.0) {
                    f_out[i] = 0.0;
                    jac[i * d..(i + 1) * d].fill(0.0);
                }
            }
        }
        Ok(())
    }

    /// Dense Jacobian `df/dx`, row-major `d x d`.
    fn jacobian(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.state_dim();
        check_dim(d, x.len())?;
        let mut xd: Vec<Dual> = x.iter().map(|&xi| Dual::constant(xi)).collect();
        let mut out = vec![Dual::constant(0.0); d];
        let mut jac = vec![0.0; d * d];
        for j in 0..d {
            xd[j].dot = 1.0;
            self.rhs_dual(t, &xd, &mut out)?;
            xd[j].dot = 0.0;
            for i in 0..d {
                jac[i * d + j] = out[i].dot;
            }
        }
        Ok(jac)
    }
}

pub(crate) fn clamp_component(x: &mut f64, dx: &mut f64, lo: f64, hi: f64) {
    if *x > hi {
        *x = hi;
    } else if *x < lo {
        *x = lo;
    }
    if (*x >= hi && *dx > 0.0) || (*x <= lo && *dx < 0.0) {
        *dx = 0.0;
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

pub(crate) fn check_finite(t: f64, x: impl IntoIterator<Item = f64>) -> Result<()> {
    for (index, v) in x.into_iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFiniteState { index, t });
        }
    }
    Ok(())
}
