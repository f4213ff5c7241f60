//! Energy, dissipation, Fisher information and the Energy-Dissipation
//! balance.
//!
//! Conventions: `E(rho) = sum_i phi(u_i) pi_i`,
//! `R(rho, j) = 1/2 sum_ij Upsilon(u_i, u_j, w_ij) theta_ij` with
//! `2 j = w theta`, and `D(rho) = 1/2 sum_ij D_phi(u_i, u_j) theta_ij`.
//! With these, `-dE/dt = R + D` along solutions.

use crate::error::{Error, Result};
use crate::ext::ExtReal;
use crate::graph::{ce_residual, CurveWithFlux, Flux, GraphSystem, Measure};
use crate::potentials::{DissipationSpec, Entropy};
use serde::Serialize;

pub fn energy(entropy: &Entropy, system: &GraphSystem, rho: &Measure) -> f64 {
    energy_of_density(entropy, system, &rho.u)
}

pub fn energy_of_density(entropy: &Entropy, system: &GraphSystem, u: &[f64]) -> f64 {
    u.iter().zip(system.pi()).map(|(&x, p)| entropy.phi(x) * p).sum()
}

/// `A_phi(u, v) = phi'(v) - phi'(u)` with the boundary conventions of
/// [`Entropy::a`].
pub fn a_phi(entropy: &Entropy, u: f64, v: f64) -> ExtReal {
    entropy.a(u, v)
}

/// `B_phi(u, v, w) = A_phi(u, v) w`, with `0 * inf = 0`.
pub fn b_phi(entropy: &Entropy, u: f64, v: f64, w: f64) -> ExtReal {
    entropy.a(u, v).scale(w)
}

/// `R(rho, j)`; `+inf` if some pair with `theta_ij = 0` carries flux.
pub fn r_action(spec: &DissipationSpec, system: &GraphSystem, rho: &Measure, flux: &Flux) -> ExtReal {
    r_action_density(spec, system, &rho.u, flux)
}

pub fn r_action_density(spec: &DissipationSpec, system: &GraphSystem, u: &[f64], flux: &Flux) -> ExtReal {
    let theta = system.theta();
    let n = system.n();
    let mut total = ExtReal::ZERO;
    for i in 0..n {
        for j in 0..n {
            let jij = flux.0[(i, j)];
            let t = theta[(i, j)];
            if t == 0.0 {
                if jij != 0.0 && i != j {
                    return ExtReal::PosInf;
                }
                continue;
            }
            let w = 2.0 * jij / t;
            total = total + spec.upsilon(u[i], u[j], w).scale(0.5 * t);
        }
    }
    total
}

pub fn d_phi_variants(spec: &DissipationSpec, entropy: &Entropy, u: f64, v: f64) -> (ExtReal, ExtReal, ExtReal) {
    spec.d_phi_variants(entropy, u, v)
}

/// `D(rho) = 1/2 sum_ij D_phi(u_i, u_j) theta_ij`.
pub fn fisher(spec: &DissipationSpec, entropy: &Entropy, system: &GraphSystem, rho: &Measure) -> ExtReal {
    fisher_of_density(spec, entropy, system, &rho.u)
}

pub fn fisher_of_density(spec: &DissipationSpec, entropy: &Entropy, system: &GraphSystem, u: &[f64]) -> ExtReal {
    fisher_with(system, u, |a, b| spec.d_phi_variants(entropy, a, b).2)
}

/// `1/2 sum_ij D^-_phi(u_i, u_j) theta_ij`.
pub fn fisher_lower(spec: &DissipationSpec, entropy: &Entropy, system: &GraphSystem, u: &[f64]) -> ExtReal {
    fisher_with(system, u, |a, b| spec.d_phi_variants(entropy, a, b).0)
}

fn fisher_with<F: Fn(f64, f64) -> ExtReal>(system: &GraphSystem, u: &[f64], d: F) -> ExtReal {
    system
        .edges()
        .iter()
        .map(|e| (d(u[e.i], u[e.j]) + d(u[e.j], u[e.i])).scale(0.5 * e.theta))
        .sum()
}

/// `dE/dt` along a flux: `1/2 sum_ij A_phi(u_i, u_j) w_ij theta_ij`, which
/// only sees the skew part of `j`.
pub fn energy_rate(entropy: &Entropy, system: &GraphSystem, u: &[f64], flux: &Flux) -> ExtReal {
    let skew = flux.skew();
    let mut total = ExtReal::ZERO;
    for e in system.edges() {
        // A is skew, so both orientations contribute the same
        total = total + b_phi(entropy, u[e.i], u[e.j], 2.0 * skew.0[(e.i, e.j)] / e.theta).scale(e.theta);
    }
    total
}

/// `max_m |Delta_m E - int_m dE/dt|` with the rate integrated by the
/// trapezoid rule on each interval.
pub fn chain_rule_residual(entropy: &Entropy, system: &GraphSystem, curve: &CurveWithFlux) -> Result<f64> {
    curve.check_grid()?;
    let mut worst = 0.0_f64;
    for m in 0..curve.intervals() {
        let dt = curve.times[m + 1] - curve.times[m];
        let (a, b) = (&curve.states[m].u, &curve.states[m + 1].u);
        let delta = energy_of_density(entropy, system, b) - energy_of_density(entropy, system, a);
        let f = &curve.fluxes[m];
        let rate = 0.5 * (energy_rate(entropy, system, a, f).to_f64() + energy_rate(entropy, system, b, f).to_f64());
        let r = (delta - dt * rate).abs();
        worst = worst.max(if r.is_nan() { f64::INFINITY } else { r });
    }
    Ok(worst)
}

/// Outcome of an Energy-Dissipation balance check over a whole curve.
#[derive(Debug, Clone, Serialize)]
pub struct EDBReport {
    pub energy_start: f64,
    pub energy_end: f64,
    /// `int R dt`, midpoint rule with the interval flux.
    pub action_integral: f64,
    /// `int D dt`, trapezoid rule.
    pub fisher_integral: f64,
    /// `action + fisher + E(end) - E(start)`.
    pub deficit: f64,
    pub quadrature: &'static str,
    pub max_step: f64,
    pub ce_residual: f64,
}

impl EDBReport {
    /// Whether `|deficit| <= rel_tol * E(start)`.
    pub fn accepted(&self, rel_tol: f64) -> bool {
        self.deficit.abs() <= rel_tol * self.energy_start.abs().max(f64::MIN_POSITIVE)
    }
}

/// Energy-Dissipation balance of a curve. Fails with
/// [`Error::ContinuityEquationViolated`] if the curve does not satisfy the
/// continuity equation to within `ce_tol`.
pub fn edb_deficit(
    spec: &DissipationSpec,
    entropy: &Entropy,
    system: &GraphSystem,
    curve: &CurveWithFlux,
    ce_tol: f64,
) -> Result<EDBReport> {
    let ce = ce_residual(system, curve)?;
    if !(ce.residual <= ce_tol) {
        return Err(Error::ContinuityEquationViolated {
            residual: ce.residual,
            tolerance: ce_tol,
        });
    }
    let mut action = 0.0;
    let mut fish = 0.0;
    let mut max_step = 0.0_f64;
    let mut d_prev = fisher_of_density(spec, entropy, system, &curve.states[0].u).to_f64();
    for m in 0..curve.intervals() {
        let dt = curve.times[m + 1] - curve.times[m];
        max_step = max_step.max(dt);
        let mid = curve.midpoint_density(m);
        action += dt * r_action_density(spec, system, &mid, &curve.fluxes[m]).to_f64();
        let d_next = fisher_of_density(spec, entropy, system, &curve.states[m + 1].u).to_f64();
        fish += 0.5 * dt * (d_prev + d_next);
        d_prev = d_next;
    }
    let energy_start = energy(entropy, system, &curve.states[0]);
    let energy_end = energy(entropy, system, curve.states.last().expect("nonempty curve"));
    Ok(EDBReport {
        energy_start,
        energy_end,
        action_integral: action,
        fisher_integral: fish,
        deficit: action + fish + energy_end - energy_start,
        quadrature: "midpoint (R), trapezoid (D)",
        max_step,
        ce_residual: ce.residual,
    })
}

/// `max |w_ij + F(u_i, u_j)|` over edges: zero exactly when the flux
/// attains equality in the chain-rule bound.
pub fn equality_defect(spec: &DissipationSpec, entropy: &Entropy, system: &GraphSystem, u: &[f64], flux: &Flux) -> f64 {
    let w = flux.skew().scaled_density(system);
    system
        .edges()
        .iter()
        .map(|e| {
            let f = spec.field_f0(entropy, u[e.i], u[e.j]).unwrap_or(f64::NAN);
            (w[(e.i, e.j)] + f).abs()
        })
        .fold(0.0, f64::max)
}

/// One row of the per-edge diagnostics table.
#[derive(Debug, Clone, Serialize)]
pub struct EdgeRecord {
    pub t: f64,
    pub i: usize,
    pub j: usize,
    pub u_i: f64,
    pub u_j: f64,
    pub w: f64,
    pub upsilon: f64,
    pub d_phi: f64,
    pub b_phi: f64,
}

/// Per-edge integrands at interval midpoints, one row per interval and
/// ordered pair with `theta_ij > 0`.
pub fn edge_diagnostics(
    spec: &DissipationSpec,
    entropy: &Entropy,
    system: &GraphSystem,
    curve: &CurveWithFlux,
) -> Result<Vec<EdgeRecord>> {
    curve.check_grid()?;
    let mut rows = Vec::new();
    for m in 0..curve.intervals() {
        let t = 0.5 * (curve.times[m] + curve.times[m + 1]);
        let u = curve.midpoint_density(m);
        let w = curve.fluxes[m].scaled_density(system);
        for e in system.edges() {
            for (i, j) in [(e.i, e.j), (e.j, e.i)] {
                rows.push(EdgeRecord {
                    t,
                    i,
                    j,
                    u_i: u[i],
                    u_j: u[j],
                    w: w[(i, j)],
                    upsilon: spec.upsilon(u[i], u[j], w[(i, j)]).to_f64(),
                    d_phi: spec.d_phi_variants(entropy, u[i], u[j]).2.to_f64(),
                    b_phi: b_phi(entropy, u[i], u[j], w[(i, j)]).to_f64(),
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{make_dissipation, ConstantConjugate, DissipationFamily};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn two_state() -> GraphSystem {
        GraphSystem::from_rows(&[0.5, 0.5], &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    fn unit_quadratic() -> DissipationSpec {
        make_dissipation(&DissipationFamily::ConstantAlpha {
            alpha: 1.0,
            psi_star: ConstantConjugate::Quadratic,
        })
        .unwrap()
    }

    #[test]
    fn energy_examples() {
        let s = two_state();
        let b = Entropy::boltzmann();
        assert_eq!(energy(&b, &s, &Measure::scaled_invariant(&s, 1.0)), 0.0);
        let rho = Measure::from_density(&s, &[4.0, 1.0]).unwrap();
        assert!((energy(&b, &s, &rho) - 0.5 * (4.0 * 4f64.ln() - 3.0)).abs() < 1e-15);
        assert!((energy(&b, &s, &rho) - 1.272588).abs() < 1e-6);
        let rho = Measure::from_density(&s, &[2.0, 0.0]).unwrap();
        assert_eq!(energy(&Entropy::Quadratic, &s, &rho), 1.0);
    }

    #[test]
    fn a_phi_examples() {
        let b = Entropy::boltzmann();
        assert_eq!(a_phi(&b, 0.3, 0.3), ExtReal::ZERO);
        assert_eq!(a_phi(&b, 0.0, 0.0), ExtReal::ZERO);
        assert!((a_phi(&b, 1.0, std::f64::consts::E).to_f64() - 1.0).abs() < 1e-15);
        assert_eq!(a_phi(&b, 0.0, 1.0), ExtReal::PosInf);
        assert_eq!(a_phi(&b, 1.0, 0.0), ExtReal::NegInf);
    }

    #[test]
    fn r_action_examples() {
        let s = two_state();
        let rho = Measure::from_density(&s, &[1.0, 1.0]).unwrap();
        assert_eq!(r_action(&unit_quadratic(), &s, &rho, &Flux::zeros(2)), ExtReal::ZERO);
        // w = +-1 means j = +-theta/2 = +-1/4
        let j = Flux(DMatrix::from_row_slice(2, 2, &[0.0, 0.25, -0.25, 0.0]));
        let r = r_action(&unit_quadratic(), &s, &rho, &j).to_f64();
        assert!((r - 0.25).abs() < 1e-15);
        let rho = Measure::from_density(&s, &[0.0, 1.0]).unwrap();
        assert_eq!(r_action(&DissipationSpec::cosh(), &s, &rho, &j), ExtReal::PosInf);
        // flux on a pair without an edge
        let s3 = GraphSystem::from_rows(&[0.5, 0.5], &[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let rho = Measure::from_density(&s3, &[1.0, 1.0]).unwrap();
        assert_eq!(r_action(&unit_quadratic(), &s3, &rho, &j), ExtReal::PosInf);
    }

    #[test]
    fn fisher_examples() {
        let s = two_state();
        let c = DissipationSpec::cosh();
        let b = Entropy::boltzmann();
        assert_eq!(fisher(&c, &b, &s, &Measure::scaled_invariant(&s, 3.0)), ExtReal::ZERO);
        let rho = Measure::from_density(&s, &[4.0, 1.0]).unwrap();
        assert!((fisher(&c, &b, &s, &rho).to_f64() - 1.0).abs() < 1e-14);
        let rho = Measure::from_density(&s, &[0.0, 1.0]).unwrap();
        assert!((fisher(&c, &b, &s, &rho).to_f64() - 1.0).abs() < 1e-14);
        assert_eq!(fisher_lower(&c, &b, &s, &rho.u), ExtReal::ZERO);
    }

    #[test]
    fn stationary_curve_balances() {
        let s = two_state();
        let curve = CurveWithFlux::stationary(&s, Measure::scaled_invariant(&s, 2.0), vec![0.0, 0.5, 1.0]);
        let r = edb_deficit(&DissipationSpec::cosh(), &Entropy::boltzmann(), &s, &curve, 1e-12).unwrap();
        assert_eq!(r.deficit, 0.0);
        assert_eq!(chain_rule_residual(&Entropy::boltzmann(), &s, &curve).unwrap(), 0.0);
    }

    #[test]
    fn violated_continuity_equation_is_rejected() {
        let s = two_state();
        let mut curve = CurveWithFlux::stationary(&s, Measure::scaled_invariant(&s, 2.0), vec![0.0, 1.0]);
        curve.fluxes[0] = Flux(DMatrix::from_row_slice(2, 2, &[0.0, 0.1, -0.1, 0.0]));
        assert!(matches!(
            edb_deficit(&DissipationSpec::cosh(), &Entropy::boltzmann(), &s, &curve, 1e-9),
            Err(Error::ContinuityEquationViolated { .. })
        ));
    }

    proptest! {
        #[test]
        fn fisher_variants_ordered(u in 0.0..5.0f64, v in 0.0..5.0f64) {
            let b = Entropy::boltzmann();
            for spec in [DissipationSpec::cosh(), DissipationSpec::quadratic()] {
                let (lo, hi, d) = spec.d_phi_variants(&b, u, v);
                prop_assert!(lo.to_f64() <= d.to_f64() * (1.0 + 1e-12) + 1e-14);
                prop_assert!(d.to_f64() <= hi.to_f64() * (1.0 + 1e-12) + 1e-14);
            }
        }

        #[test]
        fn chain_rule_bound(u in 0.01..5.0f64, v in 0.01..5.0f64, w in -5.0..5.0f64) {
            // |B| <= Upsilon + D^-
            let b = Entropy::boltzmann();
            for spec in [DissipationSpec::cosh(), DissipationSpec::quadratic()] {
                let lhs = b_phi(&b, u, v, w).to_f64().abs();
                let rhs = spec.upsilon(u, v, w).to_f64() + spec.d_phi_variants(&b, u, v).0.to_f64();
                prop_assert!(lhs <= rhs * (1.0 + 1e-10) + 1e-12);
            }
        }

        #[test]
        fn r_action_jointly_convex(
            ua in prop::collection::vec(0.05..3.0f64, 3),
            ub in prop::collection::vec(0.05..3.0f64, 3),
            ja in prop::collection::vec(-1.0..1.0f64, 3),
            jb in prop::collection::vec(-1.0..1.0f64, 3),
        ) {
            let s = GraphSystem::from_rows(
                &[0.2, 0.3, 0.5],
                &[vec![0.0, 1.5, 2.5], vec![1.0, 0.0, 5.0], vec![1.0, 3.0, 0.0]],
            ).unwrap();
            let flux = |v: &[f64]| {
                let mut m = DMatrix::zeros(3, 3);
                for (k, (i, j)) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
                    m[(i, j)] = v[k];
                    m[(j, i)] = -v[k];
                }
                Flux(m)
            };
            let spec = DissipationSpec::cosh();
            let (fa, fb) = (flux(&ja), flux(&jb));
            let ra = r_action_density(&spec, &s, &ua, &fa).to_f64();
            let rb = r_action_density(&spec, &s, &ub, &fb).to_f64();
            let um: Vec<f64> = ua.iter().zip(&ub).map(|(a, b)| 0.5 * (a + b)).collect();
            let fm = Flux((&fa.0 + &fb.0) * 0.5);
            let rm = r_action_density(&spec, &s, &um, &fm).to_f64();
            prop_assert!(rm <= 0.5 * (ra + rb) + 1e-10);
        }
    }
}
