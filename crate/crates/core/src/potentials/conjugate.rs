//! The dual dissipation density `Psi*` and its Legendre transform `Psi`.

use super::mean::Mean;
use crate::numerics::{central_diff, integrate, solve_increasing};
use std::fmt;
use std::sync::Arc;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Conjugate {
    /// `xi^2 / 2`.
    Quadratic,
    /// `scale * (cosh(rate * xi) - 1)`.
    Cosh {
        scale: f64,
        rate: f64,
    },
    /// `int_0^xi (e^s - 1) / f(e^s) ds` with `f(r) = alpha(r, 1)` for a
    /// 1-homogeneous mean.
    MeanIntegral(Mean),
    Custom {
        value: ScalarFn,
        deriv: ScalarFn,
    },
}

impl fmt::Debug for Conjugate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Conjugate::Quadratic => write!(f, "Quadratic"),
            Conjugate::Cosh { scale, rate } => write!(f, "Cosh {{ scale: {scale}, rate: {rate} }}"),
            Conjugate::MeanIntegral(m) => write!(f, "MeanIntegral({m:?})"),
            Conjugate::Custom { .. } => write!(f, "Custom(..)"),
        }
    }
}

/// `(e^x - 1) / f(e^x)` for `x >= 0`, written as `(1 - e^-x) / alpha(1, e^-x)`
/// so that it stays finite for large `x`.
fn generating_slope(mean: &Mean, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let t = (-x).exp();
    let a = mean.value(1.0, t);
    if a == 0.0 {
        return f64::INFINITY;
    }
    -(-x).exp_m1() / a
}

impl Conjugate {
    /// `Psi*(xi)`; infinite arguments give `+inf`.
    pub fn value(&self, xi: f64) -> f64 {
        if xi.is_infinite() {
            return f64::INFINITY;
        }
        match self {
            Conjugate::Quadratic => 0.5 * xi * xi,
            Conjugate::Cosh { scale, rate } => {
                // cosh(y) - 1 = 2 sinh^2(y/2), exact near zero
                let s = (0.5 * rate * xi).sinh();
                2.0 * scale * s * s
            }
            Conjugate::MeanIntegral(mean) => {
                let x = xi.abs();
                if x == 0.0 {
                    return 0.0;
                }
                integrate(|s| generating_slope(mean, s), 0.0, x, 1e-13, 0.0)
            }
            Conjugate::Custom { value, .. } => value(xi),
        }
    }

    /// `(Psi*)'(xi)`.
    pub fn deriv(&self, xi: f64) -> f64 {
        if xi.is_infinite() {
            return xi;
        }
        match self {
            Conjugate::Quadratic => xi,
            Conjugate::Cosh { scale, rate } => scale * rate * (rate * xi).sinh(),
            Conjugate::MeanIntegral(mean) => xi.signum() * generating_slope(mean, xi.abs()),
            Conjugate::Custom { deriv, .. } => deriv(xi),
        }
    }

    /// `(Psi*)''(xi)`.
    pub fn second(&self, xi: f64) -> f64 {
        match self {
            Conjugate::Quadratic => 1.0,
            Conjugate::Cosh { scale, rate } => scale * rate * rate * (rate * xi).cosh(),
            _ => central_diff(|x| self.deriv(x), xi),
        }
    }

    /// `Psi'(s)`, the inverse of `(Psi*)'`.
    pub fn dual_deriv(&self, s: f64) -> f64 {
        match self {
            Conjugate::Quadratic => s,
            Conjugate::Cosh { scale, rate } => (s / (scale * rate)).asinh() / rate,
            _ => solve_increasing(|x| self.deriv(x), |x| self.second(x), s, 0.0),
        }
    }

    /// `Psi(s) = sup_xi { s xi - Psi*(xi) }`.
    pub fn dual(&self, s: f64) -> f64 {
        if s.is_infinite() {
            return f64::INFINITY;
        }
        match self {
            Conjugate::Quadratic => 0.5 * s * s,
            Conjugate::Cosh { scale, rate } => {
                let z = s / (scale * rate);
                // s xi - scale (sqrt(1 + z^2) - 1), with sqrt(1+z^2)-1 = z^2/(sqrt(1+z^2)+1)
                let xi = z.asinh() / rate;
                s * xi - scale * z * z / ((1.0 + z * z).sqrt() + 1.0)
            }
            _ => self.numeric_dual(s),
        }
    }

    /// `Psi''(s) = 1 / (Psi*)''(Psi'(s))`.
    pub fn dual_second(&self, s: f64) -> f64 {
        match self {
            Conjugate::Quadratic => 1.0,
            Conjugate::Cosh { scale, rate } => {
                let z = s / (scale * rate);
                1.0 / (scale * rate * rate * (1.0 + z * z).sqrt())
            }
            _ => 1.0 / self.second(self.dual_deriv(s)),
        }
    }

    /// Legendre transform evaluated by solving `(Psi*)'(xi) = s`; used as the
    /// reference for every closed form of `Psi`.
    pub fn numeric_dual(&self, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        let xi = solve_increasing(|x| self.deriv(x), |x| self.second(x), s, 0.0);
        s * xi - self.value(xi)
    }
}
