//! Scalar abstraction for the tape: plain `f64` for values and first-order
//! gradients, `Dual` for forward-over-reverse second-order products.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar type the tape can compute with.
pub trait Real:
    Copy
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + 'static
{
    fn lit(x: f64) -> Self;
    fn zero() -> Self {
        Self::lit(0.0)
    }
    fn one() -> Self {
        Self::lit(1.0)
    }
    /// The primal (value) part.
    fn primal(self) -> f64;

    fn tanh(self) -> Self;
    fn atanh(self) -> Self;
    fn asinh(self) -> Self;
    fn acosh(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    /// Power with a constant exponent.
    fn powf_const(self, p: f64) -> Self;
    /// Clamp against constant bounds; derivative is zero outside `[lo, hi]`.
    fn clamp_const(self, lo: f64, hi: f64) -> Self;
}

impl Real for f64 {
    fn lit(x: f64) -> Self {
        x
    }
    fn primal(self) -> f64 {
        self
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn atanh(self) -> Self {
        f64::atanh(self)
    }
    fn asinh(self) -> Self {
        f64::asinh(self)
    }
    fn acosh(self) -> Self {
        f64::acosh(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powf_const(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    fn clamp_const(self, lo: f64, hi: f64) -> Self {
        f64::clamp(self, lo, hi)
    }
}

/// First-order dual number `v + d·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn new(v: f64, d: f64) -> Self {
        Dual { v, d }
    }
    pub fn constant(v: f64) -> Self {
        Dual { v, d: 0.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.v + o.v, self.d + o.d)
    }
}
impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.v - o.v, self.d - o.d)
    }
}
impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.v * o.v, self.d * o.v + self.v * o.d)
    }
}
impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual::new(self.v / o.v, (self.d * o.v - self.v * o.d) / (o.v * o.v))
    }
}
impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.v, -self.d)
    }
}

impl Real for Dual {
    fn lit(x: f64) -> Self {
        Dual::constant(x)
    }
    fn primal(self) -> f64 {
        self.v
    }
    fn tanh(self) -> Self {
        let t = self.v.tanh();
        Dual::new(t, self.d * (1.0 - t * t))
    }
    fn atanh(self) -> Self {
        Dual::new(self.v.atanh(), self.d / (1.0 - self.v * self.v))
    }
    fn asinh(self) -> Self {
        Dual::new(self.v.asinh(), self.d / (1.0 + self.v * self.v).sqrt())
    }
    fn acosh(self) -> Self {
        Dual::new(self.v.acosh(), self.d / (self.v * self.v - 1.0).sqrt())
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        Dual::new(e, self.d * e)
    }
    fn ln(self) -> Self {
        Dual::new(self.v.ln(), self.d / self.v)
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        Dual::new(s, self.d / (2.0 * s))
    }
    fn powf_const(self, p: f64) -> Self {
        Dual::new(self.v.powf(p), self.d * p * self.v.powf(p - 1.0))
    }
    fn clamp_const(self, lo: f64, hi: f64) -> Self {
        if self.v < lo {
            Dual::constant(lo)
        } else if self.v > hi {
            Dual::constant(hi)
        } else {
            self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_chain_rule_matches_hand_derivative() {
        // d/dx tanh(x²) = 2x·sech²(x²) at x = 0.7
        let x = Dual::new(0.7, 1.0);
        let y = (x * x).tanh();
        let expect = 2.0 * 0.7 * (1.0 - (0.49f64).tanh().powi(2));
        assert!((y.d - expect).abs() < 1e-15);
    }

    #[test]
    fn dual_clamp_kills_derivative_outside() {
        let x = Dual::new(2.0, 1.0);
        let y = x.clamp_const(0.0, 1.0);
        assert_eq!(y.v, 1.0);
        assert_eq!(y.d, 0.0);
        let z = Dual::new(0.5, 1.0).clamp_const(0.0, 1.0);
        assert_eq!(z.d, 1.0);
    }
}
