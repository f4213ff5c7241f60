//! Dissipation pairs `(Psi*, alpha)`, entropies `phi`, the perspective
//! integrand `Upsilon` and the evolution field `F`.
//!
//! ```text
//! Upsilon(u, v, w) = alpha(u, v) * Psi(w / alpha(u, v))
//! F(u, v)          = (Psi*)'(phi'(v) - phi'(u)) * alpha(u, v)
//! ```

pub mod conjugate;
pub mod entropy;
pub mod mean;

pub use conjugate::{Conjugate, ScalarFn};
pub use entropy::Entropy;
pub use mean::{Mean, MeanFn};

use crate::error::{Error, Result};
use crate::ext::ExtReal;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

/// Named dissipation families, serialized as
/// `{"family": "...", "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum DissipationFamily {
    /// `Psi* = 4 (cosh(xi/2) - 1)`, geometric mean.
    Cosh,
    /// `Psi* = xi^2 / 2`, logarithmic mean.
    Quadratic,
    /// Power mean `m_p`, `p <= 0`, with the matching generated `Psi*_p`.
    PowerMean { p: f64 },
    /// Stolarsky mean with its generated `Psi*`.
    Stolarsky { p: f64, q: f64 },
    /// `alpha = alpha0` with a quadratic or cosh `Psi*`.
    ConstantAlpha {
        alpha: f64,
        #[serde(default)]
        psi_star: ConstantConjugate,
    },
    /// `alpha = (u v)^(q/2)`, `Psi* = (4/q)(cosh(q xi / 2) - 1)`; with the
    /// Boltzmann entropy the field is `v^q - u^q`.
    PowerCosh { q: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantConjugate {
    #[default]
    Quadratic,
    Cosh,
}

/// Named entropies, serialized like [`DissipationFamily`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum EntropyFamily {
    Boltzmann {
        #[serde(default = "one")]
        gamma: f64,
    },
    Quadratic,
    Power {
        q: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl EntropyFamily {
    pub fn build(&self) -> Result<Entropy> {
        let e = match self {
            EntropyFamily::Boltzmann { gamma } => Entropy::Boltzmann { gamma: *gamma },
            EntropyFamily::Quadratic => Entropy::Quadratic,
            EntropyFamily::Power { q } => Entropy::Power { q: *q },
        };
        e.validate()?;
        Ok(e)
    }
}

/// A validated dissipation pair.
#[derive(Debug, Clone)]
pub struct DissipationSpec {
    family: Option<DissipationFamily>,
    conjugate: Conjugate,
    mean: Mean,
}

/// Builds the dissipation pair of a named family and validates it.
pub fn make_dissipation(family: &DissipationFamily) -> Result<DissipationSpec> {
    let (conjugate, mean) = match family {
        DissipationFamily::Cosh => (
            Conjugate::Cosh { scale: 4.0, rate: 0.5 },
            Mean::Geometric { power: 1.0 },
        ),
        DissipationFamily::Quadratic => (Conjugate::Quadratic, Mean::Logarithmic),
        DissipationFamily::PowerMean { p } => {
            let p = *p;
            if !p.is_finite() || p > 0.0 {
                return Err(Error::UnsupportedParameter(format!(
                    "power_mean needs p <= 0: for p > 0, alpha(0, 1) > 0 and Psi*_p grows only linearly (got p = {p})"
                )));
            }
            if p == 0.0 {
                (
                    Conjugate::Cosh { scale: 4.0, rate: 0.5 },
                    Mean::Geometric { power: 1.0 },
                )
            } else if p == -1.0 {
                (Conjugate::Cosh { scale: 1.0, rate: 1.0 }, Mean::Power(-1.0))
            } else {
                (Conjugate::MeanIntegral(Mean::Power(p)), Mean::Power(p))
            }
        }
        DissipationFamily::Stolarsky { p, q } => {
            if !(p.is_finite() && q.is_finite()) {
                return Err(Error::UnsupportedParameter(
                    "stolarsky parameters must be finite".into(),
                ));
            }
            let m = Mean::Stolarsky { p: *p, q: *q };
            (Conjugate::MeanIntegral(m.clone()), m)
        }
        DissipationFamily::ConstantAlpha { alpha, psi_star } => {
            if !(*alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::UnsupportedParameter(format!(
                    "constant alpha must be positive (got {alpha})"
                )));
            }
            let c = match psi_star {
                ConstantConjugate::Quadratic => Conjugate::Quadratic,
                ConstantConjugate::Cosh => Conjugate::Cosh { scale: 4.0, rate: 0.5 },
            };
            (c, Mean::Constant(*alpha))
        }
        DissipationFamily::PowerCosh { q } => {
            if !(*q > 0.0 && *q <= 1.0) {
                return Err(Error::UnsupportedParameter(format!(
                    "power_cosh needs q in (0, 1] (got {q})"
                )));
            }
            (
                Conjugate::Cosh {
                    scale: 4.0 / q,
                    rate: 0.5 * q,
                },
                Mean::Geometric { power: *q },
            )
        }
    };
    let spec = DissipationSpec {
        family: Some(family.clone()),
        conjugate,
        mean,
    };
    spec.validate()?;
    Ok(spec)
}

impl DissipationSpec {
    /// A user-supplied pair, accepted after sampled verification of the
    /// structural assumptions.
    pub fn custom(conjugate: Conjugate, mean: Mean) -> Result<Self> {
        let spec = Self {
            family: None,
            conjugate,
            mean,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn cosh() -> Self {
        make_dissipation(&DissipationFamily::Cosh).expect("cosh family is valid")
    }

    pub fn quadratic() -> Self {
        make_dissipation(&DissipationFamily::Quadratic).expect("quadratic family is valid")
    }

    pub fn family(&self) -> Option<&DissipationFamily> {
        self.family.as_ref()
    }

    pub fn name(&self) -> &'static str {
        match &self.family {
            Some(DissipationFamily::Cosh) => "cosh",
            Some(DissipationFamily::Quadratic) => "quadratic",
            Some(DissipationFamily::PowerMean { .. }) => "power_mean",
            Some(DissipationFamily::Stolarsky { .. }) => "stolarsky",
            Some(DissipationFamily::ConstantAlpha { .. }) => "constant_alpha",
            Some(DissipationFamily::PowerCosh { .. }) => "power_cosh",
            None => "custom",
        }
    }

    pub fn conjugate(&self) -> &Conjugate {
        &self.conjugate
    }

    pub fn mean(&self) -> &Mean {
        &self.mean
    }

    pub fn psi_star(&self, xi: f64) -> f64 {
        self.conjugate.value(xi)
    }

    pub fn psi_star_prime(&self, xi: f64) -> f64 {
        self.conjugate.deriv(xi)
    }

    pub fn psi(&self, s: f64) -> f64 {
        self.conjugate.dual(s)
    }

    pub fn psi_prime(&self, s: f64) -> f64 {
        self.conjugate.dual_deriv(s)
    }

    pub fn alpha(&self, u: f64, v: f64) -> f64 {
        self.mean.value(u, v)
    }

    pub fn alpha_recession_vanishes(&self) -> bool {
        self.mean.recession_vanishes_on_boundary()
    }

    fn validate(&self) -> Result<()> {
        let c = &self.conjugate;
        let z = c.value(0.0);
        if z.abs() > 1e-14 {
            return Err(Error::UnsupportedParameter(format!("Psi*(0) = {z} is not zero")));
        }
        for xi in [0.1, 0.5, 1.0, 2.0, 5.0] {
            let (a, b) = (c.value(xi), c.value(-xi));
            if (a - b).abs() > 1e-10 * (1.0 + a.abs()) {
                return Err(Error::UnsupportedParameter(format!("Psi* is not even at xi = {xi}")));
            }
        }
        let unit = c.value(1.0);
        for xi in [1e3, -1e3] {
            if !(c.value(xi) / 1e3 > 10.0 * unit) {
                return Err(Error::UnsupportedParameter("Psi* is not superlinear".into()));
            }
        }
        if let Conjugate::MeanIntegral(m) = c {
            if !m.is_one_homogeneous() {
                return Err(Error::UnsupportedParameter(
                    "a generated Psi* needs a 1-homogeneous mean".into(),
                ));
            }
            if m.value(0.0, 1.0) != 0.0 {
                return Err(Error::UnsupportedParameter(format!(
                    "generated Psi* is superlinear only if alpha(0, 1) = 0 (got {})",
                    m.value(0.0, 1.0)
                )));
            }
        }
        check_alpha(&self.mean)?;
        if !self.mean.recession_vanishes_on_boundary() {
            return Err(Error::UnsupportedParameter(
                "the recession of alpha must vanish on the boundary of the quadrant".into(),
            ));
        }
        Ok(())
    }

    /// `Upsilon(u, v, w) = alpha Psi(w / alpha)` with `0` for `alpha = w = 0`
    /// and `+inf` for `alpha = 0 != w`.
    pub fn upsilon(&self, u: f64, v: f64, w: f64) -> ExtReal {
        self.upsilon_with_alpha(self.alpha(u, v), w)
    }

    /// `Upsilon` with `alpha` replaced by `alpha + eps`.
    pub fn upsilon_smoothed(&self, u: f64, v: f64, w: f64, eps: f64) -> ExtReal {
        self.upsilon_with_alpha(self.alpha(u, v) + eps, w)
    }

    pub fn upsilon_with_alpha(&self, a: f64, w: f64) -> ExtReal {
        if w == 0.0 {
            return ExtReal::ZERO;
        }
        if a <= 0.0 {
            return ExtReal::PosInf;
        }
        ExtReal::from_f64(a * self.psi(w / a))
    }

    /// Value, gradient and Hessian of `(a, w) -> a Psi(w / a)` for `a > 0`,
    /// ordered as `(value, [d_a, d_w], [[aa, aw], [aw, ww]])`.
    pub fn perspective_derivatives(&self, a: f64, w: f64) -> (f64, [f64; 2], [[f64; 2]; 2]) {
        let s = w / a;
        let xi = self.conjugate.dual_deriv(s);
        let value = a * self.psi(s);
        let d_a = -self.psi_star(xi);
        let p2 = self.conjugate.dual_second(s);
        let ww = p2 / a;
        let aw = -p2 * s / a;
        let aa = p2 * s * s / a;
        (value, [d_a, xi], [[aa, aw], [aw, ww]])
    }

    /// `F(u, v) = (Psi*)'(A_phi(u, v)) alpha(u, v)`, zero where `alpha`
    /// vanishes.
    pub fn field(&self, entropy: &Entropy, u: f64, v: f64) -> ExtReal {
        let a = self.alpha(u, v);
        if a == 0.0 {
            return ExtReal::ZERO;
        }
        match entropy.a(u, v) {
            ExtReal::Finite(x) => ExtReal::from_f64(self.psi_star_prime(x) * a),
            inf => inf,
        }
    }

    /// Closed-form continuous extension of `F` to the closed quadrant, for
    /// the triples where one is known.
    fn field_closed(&self, entropy: &Entropy, u: f64, v: f64) -> Option<f64> {
        let gamma = match entropy {
            Entropy::Boltzmann { gamma } => *gamma,
            _ => return None,
        };
        match (&self.conjugate, &self.mean) {
            (Conjugate::Cosh { scale, rate }, Mean::Geometric { power }) => {
                // (scale rate / 2)(u^e1 v^e2 - u^e2 v^e1)
                let e1 = 0.5 * power - rate * gamma;
                let e2 = 0.5 * power + rate * gamma;
                Some(0.5 * scale * rate * (pow0(u, e1) * pow0(v, e2) - pow0(u, e2) * pow0(v, e1)))
            }
            (Conjugate::Quadratic, Mean::Logarithmic) => Some(gamma * (v - u)),
            (Conjugate::MeanIntegral(m), mean) if gamma == 1.0 && m.is_one_homogeneous() && same_mean(m, mean) => {
                Some(v - u)
            }
            _ => None,
        }
    }

    /// Continuous extension `F_0` of the field used by the evolution.
    pub fn field_f0(&self, entropy: &Entropy, u: f64, v: f64) -> Result<f64> {
        if u == v {
            return Ok(0.0);
        }
        let value = match self.field_closed(entropy, u, v) {
            Some(x) => x,
            None => match self.field(entropy, u, v) {
                ExtReal::Finite(x) => x,
                _ => f64::NAN,
            },
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFiniteField { u, v })
        }
    }

    /// `(D^-, D^+, D)`: `D^- = Psi*(A) alpha`, `D^+` is `+inf` where
    /// `alpha = 0` and `u != v`, and `D` is the lower semicontinuous envelope
    /// of `D^+` where a closed form is known, `D^+` otherwise.
    pub fn d_phi_variants(&self, entropy: &Entropy, u: f64, v: f64) -> (ExtReal, ExtReal, ExtReal) {
        if u == v {
            return (ExtReal::ZERO, ExtReal::ZERO, ExtReal::ZERO);
        }
        let a = self.alpha(u, v);
        let d_minus = match entropy.a(u, v) {
            ExtReal::Finite(x) => ExtReal::from_f64(self.psi_star(x)).scale(a),
            _ => ExtReal::PosInf.scale(a),
        };
        let d_plus = if a == 0.0 { ExtReal::PosInf } else { d_minus };
        let d = match self.fisher_closed(entropy, u, v) {
            Some(x) => ExtReal::from_f64(x),
            None => d_plus,
        };
        (d_minus, d_plus, d)
    }

    fn fisher_closed(&self, entropy: &Entropy, u: f64, v: f64) -> Option<f64> {
        let gamma = match entropy {
            Entropy::Boltzmann { gamma } => *gamma,
            _ => return None,
        };
        match (&self.conjugate, &self.mean) {
            (Conjugate::Cosh { scale, rate }, Mean::Geometric { power }) => {
                // (scale / 2)(u^e1 v^e2 - u^e2 v^e1)^2 with e1 = power/4 - rate gamma / 2
                let e1 = 0.25 * power - 0.5 * rate * gamma;
                let e2 = 0.25 * power + 0.5 * rate * gamma;
                let t = pow0(u, e1) * pow0(v, e2) - pow0(u, e2) * pow0(v, e1);
                Some(if t.is_nan() { f64::INFINITY } else { 0.5 * scale * t * t })
            }
            (Conjugate::Quadratic, Mean::Logarithmic) => {
                if u == 0.0 || v == 0.0 {
                    Some(f64::INFINITY)
                } else {
                    Some(0.5 * gamma * gamma * (v / u).ln() * (v - u))
                }
            }
            _ => None,
        }
    }
}

/// `x^e` with `0^e = 0` for `e > 0`, `1` for `e = 0` and `+inf` for `e < 0`.
fn pow0(x: f64, e: f64) -> f64 {
    if x == 0.0 {
        if e > 0.0 {
            0.0
        } else if e == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        x.powf(e)
    }
}

fn same_mean(a: &Mean, b: &Mean) -> bool {
    match (a, b) {
        (Mean::Geometric { power: p }, Mean::Geometric { power: q }) => p == q,
        (Mean::Logarithmic, Mean::Logarithmic) => true,
        (Mean::Power(p), Mean::Power(q)) => p == q,
        (Mean::Stolarsky { p, q }, Mean::Stolarsky { p: r, q: s }) => p == r && q == s,
        _ => false,
    }
}

/// Sampled symmetry, positivity and concavity of `alpha` on the quadrant
/// (`10^4` random chords).
fn check_alpha(mean: &Mean) -> Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_a1fa);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| 10f64.powf(rng.random_range(-3.0..3.0));
    for _ in 0..10_000 {
        let (u1, v1, u2, v2) = (draw(&mut rng), draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let a1 = mean.value(u1, v1);
        if !(a1 > 0.0 && a1.is_finite()) {
            return Err(Error::UnsupportedParameter(format!(
                "alpha({u1}, {v1}) = {a1} must be positive and finite"
            )));
        }
        let swapped = mean.value(v1, u1);
        if (a1 - swapped).abs() > 1e-12 * a1 {
            return Err(Error::UnsupportedParameter(format!(
                "alpha is not symmetric at ({u1}, {v1})"
            )));
        }
        let lam: f64 = rng.random_range(0.0..1.0);
        let a2 = mean.value(u2, v2);
        let mid = mean.value(lam * u1 + (1.0 - lam) * u2, lam * v1 + (1.0 - lam) * v2);
        let chord = lam * a1 + (1.0 - lam) * a2;
        if mid < chord - 1e-9 * (1.0 + chord.abs()) {
            return Err(Error::NonConcaveAlpha(format!(
                "alpha at the convex combination of ({u1}, {v1}) and ({u2}, {v2}) lies below the chord"
            )));
        }
    }
    Ok(())
}

/// `F(u, v) = (Psi*)'(A_phi(u, v)) alpha(u, v)` as an extended real.
pub fn field_f(spec: &DissipationSpec, entropy: &Entropy, u: f64, v: f64) -> ExtReal {
    spec.field(entropy, u, v)
}

/// `Upsilon(u, v, w)`.
pub fn upsilon(spec: &DissipationSpec, u: f64, v: f64, w: f64) -> ExtReal {
    spec.upsilon(u, v, w)
}

/// `n` log-spaced points in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// `max |F(u, v) - (v - u)|` over all pairs of grid points; `+inf` if the
/// field is infinite anywhere on the grid.
pub fn compatibility_residual(spec: &DissipationSpec, entropy: &Entropy, grid: &[f64]) -> f64 {
    let mut worst = 0.0_f64;
    for &u in grid {
        for &v in grid {
            let r = match spec.field(entropy, u, v) {
                ExtReal::Finite(f) => (f - (v - u)).abs(),
                _ => f64::INFINITY,
            };
            worst = worst.max(r);
        }
    }
    worst
}
