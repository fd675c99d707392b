use ndarray::Array2;

use super::{check_dim, check_finite, ComponentModel};
use crate::autodiff::Dual;
use crate::error::{Error, Result};

/// `dx/dt = A x`, whose solution `exp(A t) x0` is known in closed form.
#[derive(Debug, Clone)]
pub struct LinearModel {
    a: Array2<f64>,
}

impl LinearModel {
    pub fn new(a: Array2<f64>) -> Result<Self> {
        let (r, c) = a.dim();
        if r != c || r == 0 {
            return Err(Error::DimensionMismatch {
                expected: r.max(1),
                got: c,
            });
        }
        Ok(Self { a })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut a = Array2::zeros((n, n));
        for (i, row) in rows.iter().enumerate() {
            check_dim(n, row.len())?;
            for (j, &v) in row.iter().enumerate() {
                a[[i, j]] = v;
            }
        }
        Self::new(a)
    }

    /// Scalar decay `dx/dt = -x`.
    pub fn decay() -> Self {
        Self::new(Array2::from_elem((1, 1), -1.0)).unwrap()
    }

    /// Harmonic oscillator `x'' = -x` written as a first-order pair.
    pub fn oscillator() -> Self {
        Self::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.a
    }
}

/// `A x` with shape checking.
pub fn linear_test_rhs(_t: f64, state: &[f64], a: &Array2<f64>) -> Result<Vec<f64>> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::DimensionMismatch {
            expected: r,
            got: c,
        });
    }
    check_dim(c, state.len())?;
    Ok(a.rows()
        .into_iter()
        .map(|row| row.iter().zip(state).map(|(aij, xj)| aij * xj).sum())
        .collect())
}

impl ComponentModel for LinearModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn state_names(&self) -> Vec<String> {
        (1..=self.state_dim()).map(|i| format!("x{i}")).collect()
    }

    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<()> {
        check_dim(self.state_dim(), x.len())?;
        check_finite(t, x.iter().copied())?;
        for (out, row) in dx.iter_mut().zip(self.a.rows()) {
            *out = row.iter().zip(x).map(|(aij, xj)| aij * xj).sum();
        }
        Ok(())
    }

    fn rhs_dual(&self, t: f64, x: &[Dual], dx: &mut [Dual]) -> Result<()> {
        check_dim(self.state_dim(), x.len())?;
        check_finite(t, x.iter().map(|v| v.val))?;
        for (out, row) in dx.iter_mut().zip(self.a.rows()) {
            *out = row
                .iter()
                .zip(x)
                .fold(Dual::constant(0.0), |acc, (&aij, &xj)| acc + xj * aij);
        }
        Ok(())
    }
}
