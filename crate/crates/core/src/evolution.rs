//! Forward solver for `du_i/dt = sum_j F(u_i, u_j) kappa_ij` and the
//! structural checks on its solutions: mass conservation, comparison
//! principle, `L^1` contraction and decay to equilibrium.

use crate::error::{Error, Result};
use crate::functionals::{energy_of_density, fisher_of_density};
use crate::graph::{tv_distance, CurveWithFlux, Flux, GraphSystem, Measure};
use crate::potentials::{DissipationSpec, Entropy};
use log::{debug, warn};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use serde::Serialize;

/// Integrator settings. The solution is reported on the uniform grid
/// `0, dt, 2 dt, .., T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvolveOptions {
    pub t_end: f64,
    pub dt: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl EvolveOptions {
    pub fn new(t_end: f64, dt: f64) -> Self {
        Self {
            t_end,
            dt,
            rtol: 1e-8,
            atol: 1e-12,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "t_end must be positive (got {})",
                self.t_end
            )));
        }
        if !(self.dt > 0.0 && self.dt <= self.t_end) {
            return Err(Error::InvalidArgument(format!(
                "dt must be in (0, t_end] (got {})",
                self.dt
            )));
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::InvalidArgument("rtol and atol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct IntegratorStats {
    pub steps: usize,
    pub rejections: usize,
    pub positivity_rejections: usize,
    pub min_step: f64,
}

/// A solution on a uniform grid with one flux per interval, evaluated at
/// the interval's midpoint state.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Measure>,
    pub fluxes: Vec<Flux>,
    pub stats: IntegratorStats,
}

impl Trajectory {
    pub fn curve(&self) -> CurveWithFlux {
        CurveWithFlux {
            times: self.times.clone(),
            states: self.states.clone(),
            fluxes: self.fluxes.clone(),
        }
    }

    pub fn final_state(&self) -> &Measure {
        self.states.last().expect("trajectory has at least one state")
    }
}

/// The right-hand side `G[u]_i = (1/pi_i) sum_j F_0(u_i, u_j) theta_ij`,
/// with `F_0` computed once per edge so that `sum_i pi_i G[u]_i` cancels
/// pairwise.
pub struct Field<'a> {
    system: &'a GraphSystem,
    spec: &'a DissipationSpec,
    entropy: &'a Entropy,
}

impl<'a> Field<'a> {
    pub fn new(system: &'a GraphSystem, spec: &'a DissipationSpec, entropy: &'a Entropy) -> Self {
        Self { system, spec, entropy }
    }

    pub fn eval(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|x| *x = 0.0);
        for e in self.system.edges() {
            let f = self.spec.field_f0(self.entropy, u[e.i], u[e.j])? * e.theta;
            out[e.i] += f;
            out[e.j] -= f;
        }
        for (x, p) in out.iter_mut().zip(self.system.pi()) {
            *x /= p;
        }
        Ok(())
    }

    /// Flux `2 j_ij = -F_0(u_i, u_j) theta_ij`.
    pub fn flux(&self, u: &[f64]) -> Result<Flux> {
        let n = self.system.n();
        let mut j = DMatrix::zeros(n, n);
        for e in self.system.edges() {
            let f = self.spec.field_f0(self.entropy, u[e.i], u[e.j])?;
            j[(e.i, e.j)] = -0.5 * f * e.theta;
            j[(e.j, e.i)] = 0.5 * f * e.theta;
        }
        Ok(Flux(j))
    }
}

fn rk4_step(field: &Field, u: &[f64], h: f64) -> Result<Vec<f64>> {
    let n = u.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    field.eval(u, &mut k1)?;
    for i in 0..n {
        tmp[i] = u[i] + 0.5 * h * k1[i];
    }
    field.eval(&tmp, &mut k2)?;
    for i in 0..n {
        tmp[i] = u[i] + 0.5 * h * k2[i];
    }
    field.eval(&tmp, &mut k3)?;
    for i in 0..n {
        tmp[i] = u[i] + h * k3[i];
    }
    field.eval(&tmp, &mut k4)?;
    Ok((0..n)
        .map(|i| u[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Adaptive RK4 with step doubling from `t0` to `t1`. A step is also
/// rejected (and halved) when a component would drop below `-atol`.
fn integrate(
    field: &Field,
    u: &mut Vec<f64>,
    t0: f64,
    t1: f64,
    h: &mut f64,
    opts: &EvolveOptions,
    stats: &mut IntegratorStats,
) -> Result<()> {
    let mut t = t0;
    while t < t1 {
        let last = t + *h >= t1;
        let step = if last { t1 - t } else { *h };
        if step < 1e-14 * t1.abs().max(1.0) && !last {
            return Err(Error::StepSizeUnderflow {
                time: t,
                step,
                state: u.clone(),
            });
        }
        // a failed field evaluation at a trial stage is treated like a
        // positivity failure: the stage left the admissible quadrant
        let attempt = rk4_step(field, u, step).and_then(|full| {
            let half = rk4_step(field, u, 0.5 * step)?;
            let two = rk4_step(field, &half, 0.5 * step)?;
            Ok((full, two))
        });
        let (full, two) = match attempt {
            Ok(x) => x,
            Err(Error::NonFiniteField { .. }) if step > 1e-12 => {
                stats.positivity_rejections += 1;
                *h = 0.5 * step;
                continue;
            }
            Err(e) => return Err(e),
        };
        if two.iter().any(|&x| x < -opts.atol) {
            stats.positivity_rejections += 1;
            *h = 0.5 * step;
            if *h < 1e-14 * t1.abs().max(1.0) {
                return Err(Error::StepSizeUnderflow {
                    time: t,
                    step: *h,
                    state: u.clone(),
                });
            }
            continue;
        }
        let err = two
            .iter()
            .zip(&full)
            .map(|(a, b)| (a - b).abs() / 15.0 / (opts.atol + opts.rtol * a.abs()))
            .fold(0.0, f64::max);
        if err <= 1.0 {
            *u = two;
            t += step;
            stats.steps += 1;
            stats.min_step = if stats.min_step == 0.0 {
                step
            } else {
                stats.min_step.min(step)
            };
            let grow = if err == 0.0 {
                4.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 4.0)
            };
            // a step truncated at t1 says little about the next one
            if step >= *h || grow < 1.0 {
                *h = step * grow;
            }
            if last {
                t = t1;
            }
        } else {
            stats.rejections += 1;
            *h = step * (0.9 * err.powf(-0.2)).clamp(0.1, 0.5);
        }
    }
    Ok(())
}

/// Solves the evolution from the density `u0` and records states on the
/// uniform grid and midpoint fluxes on each interval.
pub fn solve_forward(
    system: &GraphSystem,
    spec: &DissipationSpec,
    entropy: &Entropy,
    u0: &[f64],
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    opts.validate()?;
    let start = Measure::from_density(system, u0)?;
    let field = Field::new(system, spec, entropy);
    let m = (opts.t_end / opts.dt).round().max(1.0) as usize;
    let dt = opts.t_end / m as f64;
    let times: Vec<f64> = (0..=m).map(|k| k as f64 * dt).collect();
    let mut u = u0.to_vec();
    let mut states = vec![start];
    let mut fluxes = Vec::with_capacity(m);
    let mut stats = IntegratorStats::default();
    let mut h = 0.5 * dt;
    for k in 0..m {
        let (t0, t1) = (times[k], times[k + 1]);
        let tm = 0.5 * (t0 + t1);
        integrate(&field, &mut u, t0, tm, &mut h, opts, &mut stats)?;
        fluxes.push(field.flux(&u)?);
        integrate(&field, &mut u, tm, t1, &mut h, opts, &mut stats)?;
        states.push(Measure::from_density(
            system,
            &u.iter().map(|&x| x.max(0.0)).collect::<Vec<_>>(),
        )?);
    }
    debug!(
        "solve_forward: {} steps, {} rejections, {} positivity rejections",
        stats.steps, stats.rejections, stats.positivity_rejections
    );
    Ok(Trajectory {
        times,
        states,
        fluxes,
        stats,
    })
}

/// Sampled one-sided Lipschitz constant
/// `max(0, sup (F_0(u', v) - F_0(u, v)) / (u' - u))` over `u < u'`, `v` in
/// `[lo, hi]`.
pub fn dissipativity_estimate(
    spec: &DissipationSpec,
    entropy: &Entropy,
    lo: f64,
    hi: f64,
    samples: usize,
    seed: u64,
) -> f64 {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut ell = 0.0_f64;
    let span = (hi - lo).max(0.0);
    for _ in 0..samples {
        let a = lo + span * rng.random::<f64>();
        let b = lo + span * rng.random::<f64>();
        let v = lo + span * rng.random::<f64>();
        let (u, u2) = if a < b { (a, b) } else { (b, a) };
        if u2 - u < 1e-12 * (1.0 + u2) {
            continue;
        }
        if let (Ok(f1), Ok(f2)) = (spec.field_f0(entropy, u, v), spec.field_f0(entropy, u2, v)) {
            ell = ell.max((f2 - f1) / (u2 - u));
        }
    }
    ell
}

fn l1_pi(system: &GraphSystem, a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(system.pi())
        .map(|((x, y), p)| (x - y).abs() * p)
        .sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    /// `max_t ||u_t - v_t|| / (e^(2 ||kappa|| ell t) ||u_0 - v_0||)`.
    pub ratio: f64,
    pub ell: f64,
    /// Whether `u_0 <= v_0` implied `u_t <= v_t + tol` on the grid
    /// (`None` if the data are not ordered).
    pub order_preserved: Option<bool>,
}

/// `L^1(pi)` distance of two solutions against the Gronwall bound with the
/// sampled one-sided Lipschitz constant.
pub fn l1_contraction_check(
    system: &GraphSystem,
    spec: &DissipationSpec,
    entropy: &Entropy,
    u0: &[f64],
    v0: &[f64],
    opts: &EvolveOptions,
) -> Result<ContractionReport> {
    let a = solve_forward(system, spec, entropy, u0, opts)?;
    let b = solve_forward(system, spec, entropy, v0, opts)?;
    let lo = u0.iter().chain(v0).cloned().fold(f64::INFINITY, f64::min);
    let hi = u0.iter().chain(v0).cloned().fold(0.0, f64::max);
    let ell = dissipativity_estimate(spec, entropy, lo, hi, 1000, 0x11);
    if ell > 10.0 {
        warn!("one-sided Lipschitz estimate {ell} is large; the contraction bound is weak");
    }
    let d0 = l1_pi(system, u0, v0);
    let mut ratio = 0.0_f64;
    if d0 > 0.0 {
        for (k, t) in a.times.iter().enumerate() {
            let d = l1_pi(system, &a.states[k].u, &b.states[k].u);
            let bound = (2.0 * system.kappa_sup() * ell * t).exp() * d0;
            ratio = ratio.max(d / bound);
        }
    }
    let ordered = u0.iter().zip(v0).all(|(x, y)| x <= y);
    let order_preserved = ordered.then(|| {
        a.states.iter().zip(&b.states).all(|(x, y)| {
            x.u.iter()
                .zip(&y.u)
                .all(|(p, q)| *p <= q + opts.atol + 10.0 * opts.rtol * q.abs())
        })
    });
    Ok(ContractionReport {
        ratio,
        ell,
        order_preserved,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarityReport {
    pub fisher_final: f64,
    /// `||rho_T - c pi||_TV` with `c` the conserved mass over `pi(V)`.
    pub tv_distance_to_c_pi: f64,
    pub energy_monotone: bool,
    pub energy_final: f64,
}

pub fn stationarity_report(
    system: &GraphSystem,
    spec: &DissipationSpec,
    entropy: &Entropy,
    trajectory: &Trajectory,
) -> StationarityReport {
    let last = trajectory.final_state();
    let c = trajectory.states[0].mass() / system.total_mass();
    let target = Measure::scaled_invariant(system, c);
    let energies: Vec<f64> = trajectory
        .states
        .iter()
        .map(|s| energy_of_density(entropy, system, &s.u))
        .collect();
    let tol = 1e-9 * energies[0].abs().max(1.0);
    StationarityReport {
        fisher_final: fisher_of_density(spec, entropy, system, &last.u).to_f64(),
        tv_distance_to_c_pi: tv_distance(&last.rho, &target.rho),
        energy_monotone: energies.windows(2).all(|w| w[1] <= w[0] + tol),
        energy_final: *energies.last().expect("nonempty"),
    }
}
