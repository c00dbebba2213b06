//! Scalar abstraction used by the expression evaluator.
//!
//! `f64` evaluates values; [`Dual`] carries a directional derivative, and
//! `Dual<Dual<f64>>` carries the mixed second derivative needed for Hessians
//! and field Jacobians.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic needed to evaluate an [`Expr`](super::Expr).
pub trait Real:
    Copy
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    /// Plain value, stripped of all derivative parts.
    fn value(&self) -> f64;
    /// True when every derivative part is finite.
    fn all_finite(&self) -> bool;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    /// `self` raised to a constant exponent.
    fn powc(self, e: f64) -> Self;
}

impl Real for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tan(self) -> Self {
        f64::tan(self)
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
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn powc(self, e: f64) -> Self {
        if e.fract() == 0.0 && e.abs() <= i32::MAX as f64 {
            self.powi(e as i32)
        } else {
            self.powf(e)
        }
    }
}

/// Forward-mode dual number `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Real> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Self { re, eps }
    }

    /// A variable seeded with unit tangent.
    pub fn variable(re: T) -> Self {
        Self {
            re,
            eps: T::constant(1.0),
        }
    }

    fn chain(self, value: T, slope: T) -> Self {
        Self {
            re: value,
            eps: self.eps * slope,
        }
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.eps * o.re + self.re * o.eps)
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Self::new(q, (self.eps - q * o.eps) / o.re)
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.re, -self.eps)
    }
}

impl<T: Real> Real for Dual<T> {
    fn constant(v: f64) -> Self {
        Self::new(T::constant(v), T::constant(0.0))
    }
    fn value(&self) -> f64 {
        self.re.value()
    }
    fn all_finite(&self) -> bool {
        self.re.all_finite() && self.eps.all_finite()
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn tan(self) -> Self {
        let t = self.re.tan();
        self.chain(t, T::constant(1.0) + t * t)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), T::constant(1.0) / self.re)
    }
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        self.chain(r, T::constant(0.5) / r)
    }
    fn abs(self) -> Self {
        // d|x|/dx taken as +1 at the origin
        if self.re.value() < 0.0 {
            -self
        } else {
            self
        }
    }
    fn powc(self, e: f64) -> Self {
        if e == 0.0 {
            return Self::constant(1.0);
        }
        let slope = T::constant(e) * self.re.powc(e - 1.0);
        self.chain(self.re.powc(e), slope)
    }
}

/// Second-order scalar: `re.re` value, `re.eps`/`eps.re` first partials along
/// the two seeded directions, `eps.eps` the mixed second partial.
pub type HyperDual = Dual<Dual<f64>>;
