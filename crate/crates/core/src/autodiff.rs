//! Forward-mode differentiation through component right-hand sides.
//!
//! Component models are written once against [`Scalar`] and evaluated either
//! on plain `f64` or on [`Dual`] numbers. Seeding one state with a unit
//! tangent yields the corresponding Jacobian column exactly.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic needed by the component right-hand sides.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// A value paired with its directional derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub val: f64,
    pub dot: f64,
}

impl Dual {
    #[inline]
    pub fn new(val: f64, dot: f64) -> Self {
        Self { val, dot }
    }

    #[inline]
    pub fn constant(val: f64) -> Self {
        Self { val, dot: 0.0 }
    }

    #[inline]
    pub fn var(val: f64) -> Self {
        Self { val, dot: 1.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.val + rhs.val, self.dot + rhs.dot)
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.val - rhs.val, self.dot - rhs.dot)
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(self.val * rhs.val, self.dot * rhs.val + self.val * rhs.dot)
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, rhs: Dual) -> Dual {
        let inv = 1.0 / rhs.val;
        Dual::new(
            self.val * inv,
            (self.dot * rhs.val - self.val * rhs.dot) * inv * inv,
        )
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        Dual::new(-self.val, -self.dot)
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, rhs: f64) -> Dual {
        Dual::new(self.val + rhs, self.dot)
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, rhs: f64) -> Dual {
        Dual::new(self.val - rhs, self.dot)
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: f64) -> Dual {
        Dual::new(self.val * rhs, self.dot * rhs)
    }
}

impl Div<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, rhs: f64) -> Dual {
        Dual::new(self.val / rhs, self.dot / rhs)
    }
}

impl Scalar for Dual {
    #[inline]
    fn cst(v: f64) -> Self {
        Dual::constant(v)
    }
    #[inline]
    fn value(self) -> f64 {
        self.val
    }
    #[inline]
    fn sin(self) -> Self {
        Dual::new(self.val.sin(), self.dot * self.val.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        Dual::new(self.val.cos(), -self.dot * self.val.sin())
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.val.exp();
        Dual::new(e, self.dot * e)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        Dual::new(s, self.dot / (2.0 * s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f<S: Scalar>(x: S) -> S {
        (x * x + 1.0).sqrt() * x.sin() / (x.exp() + 2.0) - x.cos()
    }

    #[test]
    fn dual_matches_central_difference() {
        for &x in &[-1.7, -0.3, 0.0, 0.4, 2.2] {
            let d = f(Dual::var(x));
            let h = 1e-6;
            let fd = (f(x + h) - f(x - h)) / (2.0 * h);
            assert!((d.dot - fd).abs() < 1e-8, "x = {x}: {} vs {fd}", d.dot);
            assert_eq!(d.val, f(x));
        }
    }

    #[test]
    fn constants_carry_no_tangent() {
        let c = Dual::constant(3.0);
        assert_eq!((c * c).exp().dot, 0.0);
    }
}
