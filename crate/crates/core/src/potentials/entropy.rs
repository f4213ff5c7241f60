//! Energy densities `phi` on `[0, inf)`.

use super::conjugate::ScalarFn;
use crate::error::{Error, Result};
use crate::ext::ExtReal;
use crate::numerics::central_diff;
use std::fmt;

#[derive(Clone)]
pub enum Entropy {
    /// `gamma (s log s - s + 1)`.
    Boltzmann { gamma: f64 },
    /// `s^2 / 2`.
    Quadratic,
    /// `(s^q - 1 - q (s - 1)) / (q (q - 1))`, `q > 1`.
    Power { q: f64 },
    Custom {
        phi: ScalarFn,
        phi_prime: ScalarFn,
        /// `phi'(0)`, possibly `-inf`.
        phi_prime_at_zero: f64,
    },
}

impl fmt::Debug for Entropy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entropy::Boltzmann { gamma } => write!(f, "Boltzmann {{ gamma: {gamma} }}"),
            Entropy::Quadratic => write!(f, "Quadratic"),
            Entropy::Power { q } => write!(f, "Power {{ q: {q} }}"),
            Entropy::Custom { .. } => write!(f, "Custom(..)"),
        }
    }
}

impl Entropy {
    pub fn boltzmann() -> Self {
        Entropy::Boltzmann { gamma: 1.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Entropy::Boltzmann { .. } => "boltzmann",
            Entropy::Quadratic => "quadratic",
            Entropy::Power { .. } => "power",
            Entropy::Custom { .. } => "custom",
        }
    }

    pub fn phi(&self, s: f64) -> f64 {
        match self {
            Entropy::Boltzmann { gamma } => {
                if s == 0.0 {
                    *gamma
                } else {
                    gamma * (s * s.ln() - s + 1.0)
                }
            }
            Entropy::Quadratic => 0.5 * s * s,
            Entropy::Power { q } => (s.powf(*q) - 1.0 - q * (s - 1.0)) / (q * (q - 1.0)),
            Entropy::Custom { phi, .. } => phi(s),
        }
    }

    /// `phi'(s)`; at `s = 0` returns `phi'(0)` which may be `-inf`.
    pub fn phi_prime(&self, s: f64) -> f64 {
        match self {
            Entropy::Boltzmann { gamma } => {
                if s == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    gamma * s.ln()
                }
            }
            Entropy::Quadratic => s,
            Entropy::Power { q } => (s.powf(q - 1.0) - 1.0) / (q - 1.0),
            Entropy::Custom {
                phi_prime,
                phi_prime_at_zero,
                ..
            } => {
                if s == 0.0 {
                    *phi_prime_at_zero
                } else {
                    phi_prime(s)
                }
            }
        }
    }

    pub fn phi_second(&self, s: f64) -> f64 {
        match self {
            Entropy::Boltzmann { gamma } => gamma / s,
            Entropy::Quadratic => 1.0,
            Entropy::Power { q } => s.powf(q - 2.0),
            Entropy::Custom { .. } => central_diff(|x| self.phi_prime(x), s),
        }
    }

    /// `A_phi(u, v) = phi'(v) - phi'(u)` with `A(0, 0) = 0` and, when
    /// `phi'(0) = -inf`, `A(0, v) = +inf`, `A(u, 0) = -inf`.
    pub fn a(&self, u: f64, v: f64) -> ExtReal {
        if u == v {
            return ExtReal::ZERO;
        }
        let (du, dv) = (self.phi_prime(u), self.phi_prime(v));
        if du == f64::NEG_INFINITY {
            return ExtReal::PosInf;
        }
        if dv == f64::NEG_INFINITY {
            return ExtReal::NegInf;
        }
        ExtReal::from_f64(dv - du)
    }

    /// Sampled check of nonnegativity, convexity and superlinear growth.
    pub fn validate(&self) -> Result<()> {
        if let Entropy::Boltzmann { gamma } = self {
            if !(*gamma > 0.0) {
                return Err(Error::UnsupportedParameter(format!(
                    "boltzmann gamma must be positive (got {gamma})"
                )));
            }
        }
        if let Entropy::Power { q } = self {
            if !(*q > 1.0) {
                return Err(Error::UnsupportedParameter(format!(
                    "power entropy needs q > 1 for superlinear growth (got {q})"
                )));
            }
        }
        let samples: Vec<f64> = (0..=80).map(|k| 1e-4 * 1.25f64.powi(k)).collect();
        for &s in &samples {
            let v = self.phi(s);
            if !(v >= -1e-12) {
                return Err(Error::UnsupportedParameter(format!("phi({s}) = {v} is negative")));
            }
        }
        for w in samples.windows(3) {
            let (a, b, c) = (self.phi(w[0]), self.phi(w[1]), self.phi(w[2]));
            let lam = (w[2] - w[1]) / (w[2] - w[0]);
            if b > lam * a + (1.0 - lam) * c + 1e-10 * (1.0 + b.abs()) {
                return Err(Error::UnsupportedParameter(format!("phi is not convex near {}", w[1])));
            }
        }
        if !(self.phi(1e6) / 1e6 > self.phi(1e3) / 1e3) {
            return Err(Error::UnsupportedParameter("phi does not grow superlinearly".into()));
        }
        Ok(())
    }
}
