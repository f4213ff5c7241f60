//! Edge weights `alpha(u, v)`: symmetric, concave, nonnegative functions on
//! the closed quadrant.

use crate::numerics::central_diff;
use std::fmt;
use std::sync::Arc;

pub type MeanFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Mean {
    /// `alpha = c`.
    Constant(f64),
    /// `alpha = (u v)^(power / 2)`; `power = 1` is the geometric mean.
    Geometric {
        power: f64,
    },
    /// `(u - v) / (log u - log v)`.
    Logarithmic,
    /// Power mean `m_p(u, v) = ((u^p + v^p) / 2)^(1/p)`, `p != 0`.
    Power(f64),
    /// Stolarsky mean `c_{p,q}(u, v)`.
    Stolarsky {
        p: f64,
        q: f64,
    },
    Custom(MeanFn),
}

impl fmt::Debug for Mean {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mean::Constant(c) => write!(f, "Constant({c})"),
            Mean::Geometric { power } => write!(f, "Geometric {{ power: {power} }}"),
            Mean::Logarithmic => write!(f, "Logarithmic"),
            Mean::Power(p) => write!(f, "Power({p})"),
            Mean::Stolarsky { p, q } => write!(f, "Stolarsky {{ p: {p}, q: {q} }}"),
            Mean::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

fn logarithmic(u: f64, v: f64) -> f64 {
    if u == 0.0 || v == 0.0 {
        return 0.0;
    }
    if u == v {
        return u;
    }
    let l = (v / u).ln();
    if l.abs() < 1e-4 {
        // (e^l - 1)/l = 1 + l/2 + l^2/6 + l^3/24 + ...
        u * (1.0 + l * (0.5 + l * (1.0 / 6.0 + l / 24.0)))
    } else {
        (v - u) / l
    }
}

fn power_mean(p: f64, u: f64, v: f64) -> f64 {
    if p < 0.0 && (u == 0.0 || v == 0.0) {
        return 0.0;
    }
    (0.5 * (u.powf(p) + v.powf(p))).powf(1.0 / p)
}

/// `expm1(a x) / expm1(b x)`, continuous at `x = 0`.
fn expm1_ratio(a: f64, b: f64, x: f64) -> f64 {
    if x == 0.0 || (b * x).abs() < 1e-300 {
        a / b
    } else {
        (a * x).exp_m1() / (b * x).exp_m1()
    }
}

fn stolarsky(p: f64, q: f64, u: f64, v: f64) -> f64 {
    if u == v {
        return u;
    }
    let (lo, hi) = if u < v { (u, v) } else { (v, u) };
    if lo == 0.0 {
        // boundary values: zero unless both exponents are positive
        if p > 0.0 && q > 0.0 {
            return if p == q {
                hi * (-1.0 / p).exp()
            } else {
                hi * (p / q).powf(1.0 / (q - p))
            };
        }
        return 0.0;
    }
    // write everything relative to the smaller argument: c = lo * c(1, x)
    let l = (hi / lo).ln();
    let unit = if p == 0.0 && q == 0.0 {
        (0.5 * l).exp()
    } else if p == q {
        // identric-type: exp(-1/p + (x^p log x)/(x^p - 1)) at x = e^l
        let xp = (p * l).exp();
        (-1.0 / p + xp * l / (p * l).exp_m1()).exp()
    } else if q == 0.0 || p == 0.0 {
        let r = if q == 0.0 { p } else { q };
        // ((x^r - 1) / (r log x))^(1/r)
        ((r * l).exp_m1() / (r * l)).powf(1.0 / r)
    } else {
        ((p / q) * expm1_ratio(q, p, l)).powf(1.0 / (q - p))
    };
    lo * unit
}

impl Mean {
    pub fn value(&self, u: f64, v: f64) -> f64 {
        match self {
            Mean::Constant(c) => *c,
            Mean::Geometric { power } => {
                let uv = u * v;
                if uv == 0.0 {
                    0.0
                } else {
                    uv.powf(0.5 * power)
                }
            }
            Mean::Logarithmic => logarithmic(u, v),
            Mean::Power(p) => power_mean(*p, u, v),
            Mean::Stolarsky { p, q } => stolarsky(*p, *q, u, v),
            Mean::Custom(f) => f(u, v),
        }
    }

    /// Whether `alpha(l u, l v) = l alpha(u, v)`.
    pub fn is_one_homogeneous(&self) -> bool {
        match self {
            Mean::Geometric { power } => *power == 1.0,
            Mean::Logarithmic | Mean::Power(_) | Mean::Stolarsky { .. } => true,
            Mean::Constant(_) | Mean::Custom(_) => false,
        }
    }

    /// Gradient `(d alpha/du, d alpha/dv)` at a point with `u, v > 0`.
    pub fn grad(&self, u: f64, v: f64) -> [f64; 2] {
        match self {
            Mean::Constant(_) => [0.0, 0.0],
            Mean::Geometric { power } => {
                let a = self.value(u, v);
                [0.5 * power * a / u, 0.5 * power * a / v]
            }
            _ => [
                central_diff(|x| self.value(x, v), u),
                central_diff(|y| self.value(u, y), v),
            ],
        }
    }

    /// Hessian at a point with `u, v > 0`.
    pub fn hessian(&self, u: f64, v: f64) -> [[f64; 2]; 2] {
        match self {
            Mean::Constant(_) => [[0.0; 2]; 2],
            Mean::Geometric { power } => {
                let a = self.value(u, v);
                let h = 0.5 * power;
                let uv = h * h * a / (u * v);
                [[h * (h - 1.0) * a / (u * u), uv], [uv, h * (h - 1.0) * a / (v * v)]]
            }
            _ => {
                let hu = 1e-4 * u;
                let hv = 1e-4 * v;
                let f = |x: f64, y: f64| self.value(x, y);
                let c = f(u, v);
                let uu = (f(u + hu, v) - 2.0 * c + f(u - hu, v)) / (hu * hu);
                let vv = (f(u, v + hv) - 2.0 * c + f(u, v - hv)) / (hv * hv);
                let uv =
                    (f(u + hu, v + hv) - f(u + hu, v - hv) - f(u - hu, v + hv) + f(u - hu, v - hv)) / (4.0 * hu * hv);
                [[uu, uv], [uv, vv]]
            }
        }
    }

    /// Recession `alpha_inf(u, v) = lim alpha(l u, l v) / l` vanishes on the
    /// boundary of the quadrant.
    pub fn recession_vanishes_on_boundary(&self) -> bool {
        let big = 1e12;
        [(0.0, 1.0), (1.0, 0.0)]
            .iter()
            .all(|&(u, v)| self.value(big * u, big * v) / big <= 1e-6)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_means() {
        assert_eq!(Mean::Geometric { power: 1.0 }.value(4.0, 1.0), 2.0);
        let e = std::f64::consts::E;
        assert!((Mean::Logarithmic.value(e, 1.0) - (e - 1.0)).abs() < 1e-15);
        assert!((Mean::Power(-1.0).value(1.0, 3.0) - 1.5).abs() < 1e-15);
        assert_eq!(Mean::Power(-2.0).value(0.0, 3.0), 0.0);
    }

    #[test]
    fn logarithmic_mean_near_diagonal_is_smooth() {
        let m = Mean::Logarithmic;
        let exact = |u: f64, v: f64| (u - v) / (u.ln() - v.ln());
        for d in [1e-2, 1e-3] {
            assert!((m.value(2.0, 2.0 + d) - exact(2.0, 2.0 + d)).abs() < 1e-11);
        }
        let v = m.value(2.0, 2.0 * (1.0 + 1e-9));
        assert!((v - 2.0 * (1.0 + 0.5e-9)).abs() < 1e-15);
    }

    #[test]
    fn stolarsky_contains_classical_means() {
        let (u, v) = (0.7, 3.1);
        let log = Mean::Stolarsky { p: 1.0, q: 0.0 }.value(u, v);
        assert!((log - Mean::Logarithmic.value(u, v)).abs() < 1e-13);
        let geo = Mean::Stolarsky { p: 0.0, q: 0.0 }.value(u, v);
        assert!((geo - (u * v).sqrt()).abs() < 1e-13);
        // power means m_p = c_{p, 2p}
        for p in [-1.0, -0.5, 0.5] {
            let c = Mean::Stolarsky { p, q: 2.0 * p }.value(u, v);
            assert!((c - Mean::Power(p).value(u, v)).abs() < 1e-12, "p = {p}");
        }
        let identric = Mean::Stolarsky { p: 1.0, q: 1.0 }.value(u, v);
        let expected = (-1.0f64).exp() * (v.powf(v) / u.powf(u)).powf(1.0 / (v - u));
        assert!((identric - expected).abs() < 1e-12);
        assert_eq!(Mean::Stolarsky { p: -1.0, q: 0.0 }.value(0.0, 2.0), 0.0);
    }

    #[test]
    fn geometric_derivatives_match_differences() {
        let m = Mean::Geometric { power: 0.5 };
        let (u, v) = (1.3, 0.4);
        let g = m.grad(u, v);
        let gu = central_diff(|x| m.value(x, v), u);
        assert!((g[0] - gu).abs() < 1e-8);
        let h = m.hessian(u, v);
        let huv = central_diff(|y| m.grad(u, y)[0], v);
        assert!((h[0][1] - huv).abs() < 1e-7);
    }

    #[test]
    fn recession() {
        assert!(Mean::Geometric { power: 1.0 }.recession_vanishes_on_boundary());
        assert!(Mean::Logarithmic.recession_vanishes_on_boundary());
        assert!(Mean::Constant(1.0).recession_vanishes_on_boundary());
        assert!(!Mean::Power(0.5).recession_vanishes_on_boundary());
    }
}
