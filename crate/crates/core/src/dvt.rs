//! The transport cost `W(tau, rho0, rho1)`: the least time-integrated
//! dissipation `int R(rho_t, j_t) dt` over curves solving the continuity
//! equation between two measures.
//!
//! Discretization: `M` uniform intervals, states `u^0..u^M` at the grid
//! points, one skew flux per interval with `2 j = w theta`, and the
//! dissipation of interval `m` evaluated at the midpoint state
//! `(u^m + u^{m+1}) / 2`. The discrete problem
//!
//! ```text
//! minimize   sum_m dt sum_{edges} theta_e * a Psi(w^m_e / a),  a = lambda (alpha(u_mid) + eps)
//! subject to pi_i (u^{m+1}_i - u^m_i) = -dt (div j^m)_i
//! ```
//!
//! is jointly convex and is solved by an equality-constrained Newton method
//! on the KKT system, for a decreasing schedule of `eps` with warm starts.

use crate::error::{Error, Result};
use crate::functionals::r_action_density;
use crate::graph::{solve_laplacian, CurveWithFlux, Edge, Flux, GraphSystem, Measure};
use crate::potentials::{DissipationSpec, Entropy};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Numerical parameters of a transport-cost solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DvtOptions {
    /// Number `M` of time intervals.
    pub intervals: usize,
    /// Decreasing smoothing parameters added to `alpha`.
    pub epsilon_schedule: Vec<f64>,
    /// Newton stopping tolerance on the estimated optimality gap, relative
    /// to `max(1, |value|)`.
    pub kkt_tol: f64,
    pub max_iter: usize,
    /// Factor `lambda` multiplying `alpha`; `lambda = s` turns `Psi` into
    /// `s Psi(r / s)`.
    pub dissipation_scale: f64,
}

impl Default for DvtOptions {
    fn default() -> Self {
        Self {
            intervals: 16,
            epsilon_schedule: vec![1e-2, 1e-3, 1e-4],
            kkt_tol: 1e-10,
            max_iter: 200,
            dissipation_scale: 1.0,
        }
    }
}

impl DvtOptions {
    pub fn validate(&self) -> Result<()> {
        if self.intervals == 0 {
            return Err(Error::InvalidArgument("intervals must be at least 1".into()));
        }
        if self.epsilon_schedule.is_empty() {
            return Err(Error::InvalidArgument("epsilon_schedule is empty".into()));
        }
        if self.epsilon_schedule.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(Error::InvalidArgument(
                "epsilon_schedule entries must be finite and >= 0".into(),
            ));
        }
        if self.epsilon_schedule.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::InvalidArgument(
                "epsilon_schedule must be strictly decreasing".into(),
            ));
        }
        if !(self.kkt_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kkt_tol must be positive (got {})",
                self.kkt_tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.dissipation_scale > 0.0 && self.dissipation_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dissipation_scale must be positive (got {})",
                self.dissipation_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DvtProblem<'a> {
    pub system: &'a GraphSystem,
    pub spec: &'a DissipationSpec,
    pub tau: f64,
    pub rho0: Measure,
    pub rho1: Measure,
    pub options: DvtOptions,
}

#[derive(Debug, Clone)]
pub struct DvtSolution {
    /// Cost extrapolated to `eps = 0` (linearly from the last two schedule
    /// values), or the last value if the schedule ends at 0 or has one entry.
    pub value: f64,
    /// Extrapolation correction plus the Newton gap estimate.
    pub value_tolerance: f64,
    /// Optimal curve for the last `eps` of the schedule.
    pub curve: CurveWithFlux,
    pub kkt_residual: f64,
    pub epsilon_schedule: Vec<f64>,
    /// Discrete optimum for each `eps`.
    pub values: Vec<f64>,
    /// Whether the values are nondecreasing as `eps` decreases.
    pub epsilon_monotone: bool,
    pub iterations: usize,
}

enum Endpoint<'a> {
    Fixed(Vec<f64>),
    Free(&'a Entropy),
}

/// Newton solver for the discretized problem with fixed or free right
/// endpoint. With a free endpoint the objective also contains `E(u^M)`.
pub(crate) struct Engine<'a> {
    system: &'a GraphSystem,
    spec: &'a DissipationSpec,
    n: usize,
    edges: Vec<Edge>,
    intervals: usize,
    dt: f64,
    lambda: f64,
    u0: Vec<f64>,
    end: Endpoint<'a>,
    /// Number of free states.
    k: usize,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

pub(crate) struct EngineOutcome {
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    pub gap: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

fn check_masses(system: &GraphSystem, rho0: &Measure, rho1: &Measure) -> Result<()> {
    let (m0, m1) = (rho0.mass(), rho1.mass());
    let tol = 1e-12 * m0.abs().max(m1.abs()).max(1.0);
    if (m0 - m1).abs() > tol {
        return Err(Error::Infeasible(format!("total masses differ: {m0} vs {m1}")));
    }
    for comp in system.components() {
        let a: f64 = comp.iter().map(|&i| rho0.rho[i]).sum();
        let b: f64 = comp.iter().map(|&i| rho1.rho[i]).sum();
        if (a - b).abs() > tol {
            return Err(Error::Infeasible(format!(
                "component {comp:?} carries mass {a} at the start and {b} at the end"
            )));
        }
    }
    Ok(())
}

/// Per-vertex density of the invariant measure with the same mass on each
/// component as `u`.
fn component_levels(system: &GraphSystem, u: &[f64]) -> Result<Vec<f64>> {
    let pi = system.pi();
    let mut c = vec![0.0; system.n()];
    for comp in system.components() {
        let mass: f64 = comp.iter().map(|&i| pi[i] * u[i]).sum();
        let weight: f64 = comp.iter().map(|&i| pi[i]).sum();
        if !(mass > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "component {comp:?} carries no mass; each component must carry positive mass"
            )));
        }
        for &i in &comp {
            c[i] = mass / weight;
        }
    }
    Ok(c)
}

impl<'a> Engine<'a> {
    fn build(
        system: &'a GraphSystem,
        spec: &'a DissipationSpec,
        tau: f64,
        intervals: usize,
        lambda: f64,
        u0: Vec<f64>,
        end: Endpoint<'a>,
    ) -> Self {
        let n = system.n();
        let edges = system.edges().to_vec();
        let ne = edges.len();
        let k = match end {
            Endpoint::Fixed(_) => intervals - 1,
            Endpoint::Free(_) => intervals,
        };
        let dt = tau / intervals as f64;
        let mut dropped = vec![false; n * intervals];
        if matches!(end, Endpoint::Fixed(_)) {
            for comp in system.components() {
                let v = *comp.last().expect("nonempty component");
                dropped[(intervals - 1) * n + v] = true;
            }
        }
        let rows: Vec<usize> = (0..n * intervals).filter(|r| !dropped[*r]).collect();
        let nvars = n * k + intervals * ne;
        let mut a = DMatrix::zeros(rows.len(), nvars);
        let mut b = DVector::zeros(rows.len());
        let pi = system.pi();
        let mut eng = Self {
            system,
            spec,
            n,
            edges,
            intervals,
            dt,
            lambda,
            u0,
            end,
            k,
            a: DMatrix::zeros(0, 0),
            b: DVector::zeros(0),
        };
        for (r, &row) in rows.iter().enumerate() {
            let (m, i) = (row / n, row % n);
            // pi_i (u^{m+1}_i - u^m_i) + dt sum_e s_ie theta_e w^m_e = 0
            match eng.state_var(m + 1, i) {
                Some(c) => a[(r, c)] += pi[i],
                None => b[r] -= pi[i] * eng.fixed_state(m + 1, i),
            }
            match eng.state_var(m, i) {
                Some(c) => a[(r, c)] -= pi[i],
                None => b[r] += pi[i] * eng.fixed_state(m, i),
            }
            for (e, edge) in eng.edges.iter().enumerate() {
                let s = if edge.i == i {
                    1.0
                } else if edge.j == i {
                    -1.0
                } else {
                    continue;
                };
                a[(r, eng.w_var(m, e))] += s * dt * edge.theta;
            }
        }
        eng.a = a;
        eng.b = b;
        eng
    }

    pub(crate) fn fixed(
        system: &'a GraphSystem,
        spec: &'a DissipationSpec,
        tau: f64,
        options: &DvtOptions,
        rho0: &Measure,
        rho1: &Measure,
    ) -> Self {
        Self::build(
            system,
            spec,
            tau,
            options.intervals,
            options.dissipation_scale,
            rho0.u.clone(),
            Endpoint::Fixed(rho1.u.clone()),
        )
    }

    pub(crate) fn free(
        system: &'a GraphSystem,
        spec: &'a DissipationSpec,
        entropy: &'a Entropy,
        tau: f64,
        options: &DvtOptions,
        rho0: &Measure,
    ) -> Self {
        Self::build(
            system,
            spec,
            tau,
            options.intervals,
            options.dissipation_scale,
            rho0.u.clone(),
            Endpoint::Free(entropy),
        )
    }

    fn nvars(&self) -> usize {
        self.n * self.k + self.intervals * self.edges.len()
    }

    fn state_var(&self, m: usize, i: usize) -> Option<usize> {
        if m == 0 || m > self.k {
            None
        } else {
            Some((m - 1) * self.n + i)
        }
    }

    fn fixed_state(&self, m: usize, i: usize) -> f64 {
        if m == 0 {
            return self.u0[i];
        }
        match &self.end {
            Endpoint::Fixed(u1) => u1[i],
            Endpoint::Free(_) => unreachable!("free endpoint has no fixed state {m}"),
        }
    }

    fn w_var(&self, m: usize, e: usize) -> usize {
        self.n * self.k + m * self.edges.len() + e
    }

    fn state(&self, x: &[f64], m: usize, i: usize) -> f64 {
        match self.state_var(m, i) {
            Some(c) => x[c],
            None => self.fixed_state(m, i),
        }
    }

    pub(crate) fn states(&self, x: &[f64]) -> Vec<Vec<f64>> {
        (0..=self.intervals)
            .map(|m| (0..self.n).map(|i| self.state(x, m, i)).collect())
            .collect()
    }

    /// Starting point satisfying the constraints: given states, fluxes from
    /// the graph Laplacian.
    fn feasible_from_states(&self, states: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.nvars()];
        for (m, s) in states.iter().enumerate() {
            for i in 0..self.n {
                if let Some(c) = self.state_var(m, i) {
                    x[c] = s[i];
                }
            }
        }
        let pi = self.system.pi();
        for m in 0..self.intervals {
            let rhs: Vec<f64> = (0..self.n)
                .map(|i| pi[i] * (states[m + 1][i] - states[m][i]) / self.dt)
                .collect();
            let psi = solve_laplacian(self.system, &rhs, 1e-9)?;
            for (e, edge) in self.edges.iter().enumerate() {
                x[self.w_var(m, e)] = psi[edge.j] - psi[edge.i];
            }
        }
        Ok(x)
    }

    pub(crate) fn initial_point(&self) -> Result<Vec<f64>> {
        let big_m = self.intervals as f64;
        let c = component_levels(self.system, &self.u0)?;
        let mix =
            |u: &[f64], eta: f64| -> Vec<f64> { u.iter().zip(&c).map(|(a, b)| (1.0 - eta) * a + eta * b).collect() };
        let states: Vec<Vec<f64>> = match &self.end {
            Endpoint::Fixed(u1) => {
                let lerp: Vec<Vec<f64>> = (0..=self.intervals)
                    .map(|m| {
                        let t = m as f64 / big_m;
                        self.u0.iter().zip(u1).map(|(a, b)| (1.0 - t) * a + t * b).collect()
                    })
                    .collect();
                let top = lerp.iter().flatten().fold(0.0_f64, |a, &b| a.max(b));
                let degenerate = lerp[1..self.intervals].iter().flatten().any(|&v| v <= 1e-12 * top);
                if degenerate {
                    lerp.iter()
                        .enumerate()
                        .map(|(m, s)| {
                            let t = m as f64 / big_m;
                            mix(s, 0.4 * t * (1.0 - t))
                        })
                        .collect()
                } else {
                    lerp
                }
            }
            Endpoint::Free(_) => {
                let top = self.u0.iter().fold(0.0_f64, |a, &b| a.max(b));
                let degenerate = self.u0.iter().any(|&v| v <= 1e-12 * top);
                (0..=self.intervals)
                    .map(|m| {
                        if degenerate {
                            mix(&self.u0, 0.1 * m as f64 / big_m)
                        } else {
                            self.u0.clone()
                        }
                    })
                    .collect()
            }
        };
        self.feasible_from_states(&states)
    }

    fn edge_alpha(&self, x: &[f64], m: usize, e: &Edge) -> (f64, f64) {
        let ui = 0.5 * (self.state(x, m, e.i) + self.state(x, m + 1, e.i));
        let uj = 0.5 * (self.state(x, m, e.j) + self.state(x, m + 1, e.j));
        (ui, uj)
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        x[..self.n * self.k].iter().all(|&v| v > 0.0 && v.is_finite()) && x.iter().all(|v| v.is_finite())
    }

    /// Dissipation part of the objective.
    pub(crate) fn dissipation(&self, x: &[f64], eps: f64) -> f64 {
        if !self.in_domain(x) {
            return f64::INFINITY;
        }
        let mut total = 0.0;
        for m in 0..self.intervals {
            for (e, edge) in self.edges.iter().enumerate() {
                let (ui, uj) = self.edge_alpha(x, m, edge);
                let a = self.lambda * (self.spec.alpha(ui, uj) + eps);
                let w = x[self.w_var(m, e)];
                let v = self.spec.upsilon_with_alpha(a, w).to_f64();
                total += self.dt * edge.theta * v;
            }
        }
        total
    }

    pub(crate) fn energy_term(&self, x: &[f64]) -> f64 {
        match &self.end {
            Endpoint::Fixed(_) => 0.0,
            Endpoint::Free(entropy) => {
                let pi = self.system.pi();
                (0..self.n)
                    .map(|i| pi[i] * entropy.phi(self.state(x, self.intervals, i)))
                    .sum()
            }
        }
    }

    fn objective(&self, x: &[f64], eps: f64) -> f64 {
        let d = self.dissipation(x, eps);
        if d.is_finite() {
            d + self.energy_term(x)
        } else {
            f64::INFINITY
        }
    }

    fn gradient_hessian(&self, x: &[f64], eps: f64) -> (DVector<f64>, DMatrix<f64>) {
        let nv = self.nvars();
        let mut g = DVector::zeros(nv);
        let mut h = DMatrix::zeros(nv, nv);
        let mean = self.spec.mean();
        let lam = self.lambda;
        for m in 0..self.intervals {
            for (e, edge) in self.edges.iter().enumerate() {
                let (ui, uj) = self.edge_alpha(x, m, edge);
                let wv = self.w_var(m, e);
                let w = x[wv];
                let c = self.dt * edge.theta;
                let a = lam * (mean.value(ui, uj) + eps);
                if !(a > 0.0) {
                    // keeps w pinned at 0 where the cost is infinite otherwise
                    h[(wv, wv)] += 1e8 * c;
                    continue;
                }
                let (_, [da, dw], [[aa, aw], [_, ww]]) = self.spec.perspective_derivatives(a, w);
                let ga = mean.grad(ui, uj);
                let ha = mean.hessian(ui, uj);
                // local variables: (ubar_i, ubar_j, w)
                let lg = [c * da * lam * ga[0], c * da * lam * ga[1], c * dw];
                let mut lh = [[0.0; 3]; 3];
                for p in 0..2 {
                    for q in 0..2 {
                        lh[p][q] = c * (aa * lam * lam * ga[p] * ga[q] + da * lam * ha[p][q]);
                    }
                    lh[p][2] = c * aw * lam * ga[p];
                    lh[2][p] = lh[p][2];
                }
                lh[2][2] = c * ww;
                // each ubar is half the sum of two states
                let mut map: Vec<(usize, usize, f64)> = Vec::with_capacity(5);
                for (p, v) in [edge.i, edge.j].into_iter().enumerate() {
                    for s in [m, m + 1] {
                        if let Some(col) = self.state_var(s, v) {
                            map.push((p, col, 0.5));
                        }
                    }
                }
                map.push((2, wv, 1.0));
                for &(p, cp, sp) in &map {
                    g[cp] += sp * lg[p];
                    for &(q, cq, sq) in &map {
                        h[(cp, cq)] += sp * sq * lh[p][q];
                    }
                }
            }
        }
        if let Endpoint::Free(entropy) = &self.end {
            let pi = self.system.pi();
            for i in 0..self.n {
                let col = self.state_var(self.intervals, i).expect("free endpoint is a variable");
                g[col] += pi[i] * entropy.phi_prime(x[col]);
                h[(col, col)] += pi[i] * entropy.phi_second(x[col]);
            }
        }
        (g, h)
    }

    /// Newton iterations for one value of `eps`. Returns the iterate, the
    /// gap estimate, the KKT residual and the iteration count.
    fn newton(&self, mut x: Vec<f64>, eps: f64, tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64, f64, usize)> {
        let nv = self.nvars();
        let nc = self.a.nrows();
        let mut f = self.objective(&x, eps);
        if !f.is_finite() {
            return Err(Error::Infeasible("no finite-cost curve on this grid".into()));
        }
        let mut last_residual = f64::INFINITY;
        for it in 0..max_iter {
            let (g, h) = self.gradient_hessian(&x, eps);
            let xv = DVector::from_column_slice(&x);
            let primal = &self.b - &self.a * &xv;
            let mut kkt = DMatrix::zeros(nv + nc, nv + nc);
            kkt.view_mut((0, 0), (nv, nv)).copy_from(&h);
            kkt.view_mut((0, nv), (nv, nc)).copy_from(&self.a.transpose());
            kkt.view_mut((nv, 0), (nc, nv)).copy_from(&self.a);
            let diag_scale = (0..nv).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
            let mut rhs = DVector::zeros(nv + nc);
            rhs.rows_mut(0, nv).copy_from(&(-&g));
            rhs.rows_mut(nv, nc).copy_from(&primal);
            let sol = match kkt.clone().lu().solve(&rhs) {
                Some(s) if s.iter().all(|v| v.is_finite()) => s,
                _ => {
                    for i in 0..nv {
                        kkt[(i, i)] += 1e-10 * diag_scale;
                    }
                    kkt.lu().solve(&rhs).ok_or(Error::SolverStalled {
                        iterations: it,
                        residual: last_residual,
                        value: f,
                    })?
                }
            };
            let dx = sol.rows(0, nv).into_owned();
            let slope = g.dot(&dx);
            let dec2 = -slope;
            let primal_norm = primal.amax();
            last_residual = (&h * &dx).amax() + primal_norm;
            let gap = 0.5 * dec2.max(0.0);
            let scale = f.abs().max(1.0);
            if gap <= tol * scale && primal_norm <= 1e-11 * scale {
                return Ok((x, gap, last_residual, it));
            }
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-14 {
                let trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, d)| a + t * d).collect();
                let ft = self.objective(&trial, eps);
                if ft.is_finite() && ft <= f + 1e-4 * t * slope.min(0.0) + 1e-15 * scale {
                    x = trial;
                    f = ft;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                if gap <= 1e3 * tol * scale {
                    return Ok((x, gap, last_residual, it));
                }
                return Err(Error::SolverStalled {
                    iterations: it,
                    residual: last_residual,
                    value: f,
                });
            }
        }
        Err(Error::SolverStalled {
            iterations: max_iter,
            residual: last_residual,
            value: f,
        })
    }

    /// Solves along the schedule with warm starts.
    pub(crate) fn solve(&self, options: &DvtOptions) -> Result<EngineOutcome> {
        let mut x = self.initial_point()?;
        let mut values = Vec::with_capacity(options.epsilon_schedule.len());
        let mut gap = 0.0;
        let mut kkt_residual = 0.0;
        let mut iterations = 0;
        for &eps in &options.epsilon_schedule {
            let (xn, g, r, it) = self.newton(x, eps, options.kkt_tol, options.max_iter)?;
            x = xn;
            values.push(self.objective(&x, eps));
            gap = g;
            kkt_residual = r;
            iterations += it;
        }
        Ok(EngineOutcome {
            x,
            values,
            gap,
            kkt_residual,
            iterations,
        })
    }

    pub(crate) fn curve(&self, x: &[f64], t0: f64) -> Result<CurveWithFlux> {
        let states = self
            .states(x)
            .iter()
            .map(|u| Measure::from_density(self.system, &u.iter().map(|v| v.max(0.0)).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        let fluxes = (0..self.intervals)
            .map(|m| {
                let mut f = Flux::zeros(self.n);
                for (e, edge) in self.edges.iter().enumerate() {
                    let j = 0.5 * x[self.w_var(m, e)] * edge.theta;
                    f.0[(edge.i, edge.j)] = j;
                    f.0[(edge.j, edge.i)] = -j;
                }
                f
            })
            .collect();
        Ok(CurveWithFlux {
            times: (0..=self.intervals).map(|m| t0 + m as f64 * self.dt).collect(),
            states,
            fluxes,
        })
    }
}

/// `(value at eps -> 0, |correction|)` from the last two schedule values.
fn extrapolate(schedule: &[f64], values: &[f64]) -> (f64, f64) {
    let l = values.len();
    let last = values[l - 1];
    if l < 2 || schedule[l - 1] == 0.0 {
        return (last, 0.0);
    }
    let (e1, e2) = (schedule[l - 2], schedule[l - 1]);
    let (v1, v2) = (values[l - 2], values[l - 1]);
    let v0 = v2 - e2 * (v1 - v2) / (e1 - e2);
    (v0, (v0 - last).abs())
}

/// `W(tau, rho0, rho1)`.
pub fn dvt_cost(problem: &DvtProblem<'_>) -> Result<DvtSolution> {
    let DvtProblem {
        system,
        spec,
        tau,
        rho0,
        rho1,
        options,
    } = problem;
    options.validate()?;
    if !(*tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau must be positive (got {tau})")));
    }
    if rho0.u.len() != system.n() || rho1.u.len() != system.n() {
        return Err(Error::Dimension("endpoint measures do not match the system".into()));
    }
    check_masses(system, rho0, rho1)?;
    let engine = Engine::fixed(system, spec, *tau, options, rho0, rho1);
    let out = engine.solve(options)?;
    let (value, correction) = extrapolate(&options.epsilon_schedule, &out.values);
    let epsilon_monotone = out
        .values
        .windows(2)
        .all(|w| w[1] >= w[0] - options.kkt_tol * w[0].abs().max(1.0));
    Ok(DvtSolution {
        value,
        value_tolerance: correction + out.gap + 1e-12,
        curve: engine.curve(&out.x, 0.0)?,
        kkt_residual: out.kkt_residual,
        epsilon_schedule: options.epsilon_schedule.clone(),
        values: out.values,
        epsilon_monotone,
        iterations: out.iterations,
    })
}

/// W-action of a sampled curve over dyadic partitions.
#[derive(Debug, Clone, Serialize)]
pub struct WActionReport {
    /// `sum W` over the partition at each level `0..=depth`.
    pub levels: Vec<f64>,
    /// Value at the finest level.
    pub value: f64,
    /// Whether the level values are nondecreasing (up to solver tolerance).
    pub monotone: bool,
    pub tolerance: f64,
}

/// Sums of `W` over the dyadic partitions of a sampled curve. The samples
/// must number `k 2^depth + 1`; level `l` uses every `k 2^(depth - l)`-th
/// sample, and every sub-problem is discretized with
/// `options.intervals * 2^(depth - l)` intervals, so that all levels share
/// one time grid.
pub fn w_action(
    system: &GraphSystem,
    spec: &DissipationSpec,
    times: &[f64],
    states: &[Measure],
    depth: u32,
    options: &DvtOptions,
) -> Result<WActionReport> {
    if times.len() != states.len() || times.len() < 2 {
        return Err(Error::GridMismatch(format!(
            "{} times for {} states",
            times.len(),
            states.len()
        )));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::GridMismatch("times are not strictly increasing".into()));
    }
    let segments = times.len() - 1;
    let parts = 1usize << depth;
    if !segments.is_multiple_of(parts) {
        return Err(Error::GridMismatch(format!(
            "{} samples cannot be split into {parts} dyadic pieces",
            times.len()
        )));
    }
    let base = segments / parts;
    let mut levels = Vec::with_capacity(depth as usize + 1);
    let mut tolerance = 0.0_f64;
    for level in 0..=depth {
        let step = base << (depth - level);
        let opts = DvtOptions {
            intervals: options.intervals << (depth - level),
            ..options.clone()
        };
        let pieces: Vec<(usize, usize)> = (0..1usize << level).map(|p| (p * step, (p + 1) * step)).collect();
        let sols = pieces
            .par_iter()
            .map(|&(a, b)| {
                dvt_cost(&DvtProblem {
                    system,
                    spec,
                    tau: times[b] - times[a],
                    rho0: states[a].clone(),
                    rho1: states[b].clone(),
                    options: opts.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        levels.push(sols.iter().map(|s| s.value).sum());
        tolerance = tolerance.max(sols.iter().map(|s| s.value_tolerance).sum());
    }
    let monotone = levels.windows(2).all(|w| w[1] >= w[0] - 2.0 * tolerance);
    Ok(WActionReport {
        value: *levels.last().expect("at least one level"),
        levels,
        monotone,
        tolerance,
    })
}

#[derive(Debug, Clone)]
pub struct FeasibleCurve {
    pub curve: CurveWithFlux,
    /// Discrete action `sum dt R(u_mid, j)`, an upper bound for the
    /// discrete cost on the same grid.
    pub bound: f64,
}

/// Explicit admissible curve between two positive measures: the linear
/// interpolation traversed with the clock `s = (t / tau)^gamma`, driven by
/// the least-squares flux `w = grad psi` with `L psi = pi (u1 - u0)`.
///
/// On a finite graph every flux has finite `L^p` norm, so the least-squares
/// flux serves for every growth exponent `p`; `p` only enters through the
/// requirement `gamma > p - 1`.
pub fn feasible_curve(
    system: &GraphSystem,
    spec: &DissipationSpec,
    rho0: &Measure,
    rho1: &Measure,
    tau: f64,
    gamma: f64,
    p: f64,
    intervals: usize,
) -> Result<FeasibleCurve> {
    if !(p > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "growth exponent p must exceed 1 (got {p})"
        )));
    }
    if !(gamma > p - 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma must exceed p - 1 = {} (got {gamma})",
            p - 1.0
        )));
    }
    if !(tau > 0.0) || intervals == 0 {
        return Err(Error::InvalidArgument("tau and intervals must be positive".into()));
    }
    for (name, r) in [("rho0", rho0), ("rho1", rho1)] {
        if r.u.len() != system.n() {
            return Err(Error::Dimension(format!("{name} does not match the system")));
        }
        if r.u.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument(format!("{name} must be strictly positive")));
        }
    }
    let pi = system.pi();
    let n = system.n();
    let rhs: Vec<f64> = (0..n).map(|i| pi[i] * (rho1.u[i] - rho0.u[i])).collect();
    let psi = solve_laplacian(system, &rhs, 1e-12)?;
    let clock = |t: f64| (t / tau).powf(gamma);
    let dt = tau / intervals as f64;
    let times: Vec<f64> = (0..=intervals).map(|m| m as f64 * dt).collect();
    let states = times
        .iter()
        .map(|&t| {
            let s = clock(t);
            let u: Vec<f64> = rho0.u.iter().zip(&rho1.u).map(|(a, b)| (1.0 - s) * a + s * b).collect();
            Measure::from_density(system, &u)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut fluxes = Vec::with_capacity(intervals);
    let mut bound = 0.0;
    for m in 0..intervals {
        let rate = (clock(times[m + 1]) - clock(times[m])) / dt;
        let mut f = Flux::zeros(n);
        for e in system.edges() {
            let j = 0.5 * rate * (psi[e.j] - psi[e.i]) * e.theta;
            f.0[(e.i, e.j)] = j;
            f.0[(e.j, e.i)] = -j;
        }
        let curve_mid: Vec<f64> = states[m]
            .u
            .iter()
            .zip(&states[m + 1].u)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        bound += dt * r_action_density(spec, system, &curve_mid, &f).to_f64();
        fluxes.push(f);
    }
    Ok(FeasibleCurve {
        curve: CurveWithFlux { times, states, fluxes },
        bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoincareEstimate {
    pub value: f64,
    /// `true` for `q = 2` (eigenvalue computation); otherwise `value` is a
    /// lower bound found by projected gradient ascent.
    pub exact: bool,
}

fn poincare_quotient(system: &GraphSystem, q: f64, xi: &[f64]) -> (f64, Vec<f64>) {
    let pi = system.pi();
    let n = system.n();
    let num: f64 = (0..n).map(|i| pi[i] * xi[i].abs().powf(q)).sum();
    let mut den = 0.0;
    let mut gn = vec![0.0; n];
    let mut gd = vec![0.0; n];
    for i in 0..n {
        gn[i] = q * pi[i] * xi[i].abs().powf(q - 1.0) * xi[i].signum();
    }
    for e in system.edges() {
        let d = xi[e.j] - xi[e.i];
        // both orientations of the edge
        den += 2.0 * e.theta * d.abs().powf(q);
        let gdv = 2.0 * e.theta * q * d.abs().powf(q - 1.0) * d.signum();
        gd[e.j] += gdv;
        gd[e.i] -= gdv;
    }
    let ratio = num / den;
    let grad = (0..n).map(|i| (gn[i] - ratio * gd[i]) / den).collect();
    (ratio, grad)
}

/// Best constant `C_P` in `int |xi|^q dpi <= C_P int |grad xi|^q dtheta` for
/// `pi`-mean-zero `xi`, with `theta` summed over ordered pairs.
pub fn poincare_constant(system: &GraphSystem, q: f64, seed: u64) -> Result<PoincareEstimate> {
    if !(q > 1.0 && q.is_finite()) {
        return Err(Error::InvalidArgument(format!("q must lie in (1, inf) (got {q})")));
    }
    let comps = system.components();
    if comps.len() > 1 {
        return Err(Error::Disconnected { components: comps });
    }
    let n = system.n();
    if n == 1 {
        return Ok(PoincareEstimate {
            value: 0.0,
            exact: true,
        });
    }
    let pi = system.pi();
    let lap = system.laplacian();
    let sym = DMatrix::from_fn(n, n, |i, j| lap[(i, j)] / (pi[i] * pi[j]).sqrt());
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lambda2 = eig.eigenvalues[order[1]];
    let exact_value = 1.0 / (2.0 * lambda2);
    if q == 2.0 {
        return Ok(PoincareEstimate {
            value: exact_value,
            exact: true,
        });
    }
    let project = |xi: &mut Vec<f64>| {
        let mean = xi.iter().zip(pi).map(|(a, p)| a * p).sum::<f64>() / pi.iter().sum::<f64>();
        for v in xi.iter_mut() {
            *v -= mean;
        }
        let norm = xi
            .iter()
            .zip(pi)
            .map(|(a, p)| p * a.abs().powf(q))
            .sum::<f64>()
            .powf(1.0 / q);
        if norm > 0.0 {
            for v in xi.iter_mut() {
                *v /= norm;
            }
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<Vec<f64>> = vec![(0..n).map(|i| eig.eigenvectors[(i, order[1])] / pi[i].sqrt()).collect()];
    for _ in 0..16 {
        starts.push((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
    }
    let mut best = 0.0_f64;
    for mut xi in starts {
        project(&mut xi);
        let (mut r, mut g) = poincare_quotient(system, q, &xi);
        let mut step = 1.0;
        for _ in 0..2000 {
            let mut accepted = false;
            while step > 1e-14 {
                let mut trial: Vec<f64> = xi.iter().zip(&g).map(|(a, b)| a + step * b).collect();
                project(&mut trial);
                let (rt, gt) = poincare_quotient(system, q, &trial);
                if rt.is_finite() && rt > r {
                    let gain = rt - r;
                    xi = trial;
                    r = rt;
                    g = gt;
                    step *= 2.0;
                    accepted = gain > 1e-15 * r;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if r.is_finite() {
            best = best.max(r);
        }
    }
    Ok(PoincareEstimate {
        value: best,
        exact: false,
    })
}

/// Worst violations of the cost axioms over random samples.
#[derive(Debug, Clone, Serialize)]
pub struct AxiomReport {
    pub samples: usize,
    /// `max W(1, rho, rho)`.
    pub identity: f64,
    /// `max (W(2, r1, r3) - W(1, r1, r2) - W(1, r2, r3))_+`.
    pub triangle: f64,
    /// `max (W(2) - W(1))_+ + (W(1) - W(1/2))_+`.
    pub monotonicity: f64,
    /// `max (W(1) - 2/3 W(1/2) - 1/3 W(2))_+`.
    pub convexity: f64,
    /// `max |W(1, r1, r2) - W(1, r2, r1)|`.
    pub symmetry: f64,
    /// `max |W(2, r1, r2) - W_2(1, r1, r2)|` where `W_2` uses `2 Psi(r / 2)`.
    pub scaling: f64,
    /// Largest solver tolerance among the solves of a sample.
    pub tolerance: f64,
}

/// Random measure with density uniform in `[0.2, 2]`, rescaled to the mass
/// of `pi`.
fn random_measure(system: &GraphSystem, rng: &mut ChaCha8Rng) -> Measure {
    let pi = system.pi();
    let u: Vec<f64> = (0..system.n()).map(|_| rng.random_range(0.2..2.0)).collect();
    let mass: f64 = u.iter().zip(pi).map(|(a, p)| a * p).sum();
    let total = system.total_mass();
    let u: Vec<f64> = u.iter().map(|a| a * total / mass).collect();
    Measure::from_density(system, &u).expect("positive density")
}

pub fn cost_axioms_check(
    system: &GraphSystem,
    spec: &DissipationSpec,
    samples: usize,
    seed: u64,
    options: &DvtOptions,
) -> Result<AxiomReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triples: Vec<[Measure; 3]> = (0..samples)
        .map(|_| {
            [
                random_measure(system, &mut rng),
                random_measure(system, &mut rng),
                random_measure(system, &mut rng),
            ]
        })
        .collect();
    let w = |tau: f64, a: &Measure, b: &Measure, opts: &DvtOptions| {
        dvt_cost(&DvtProblem {
            system,
            spec,
            tau,
            rho0: a.clone(),
            rho1: b.clone(),
            options: opts.clone(),
        })
    };
    let long = DvtOptions {
        intervals: 2 * options.intervals,
        ..options.clone()
    };
    let scaled = DvtOptions {
        dissipation_scale: 2.0 * options.dissipation_scale,
        ..options.clone()
    };
    let rows = triples
        .par_iter()
        .map(|[r1, r2, r3]| -> Result<[f64; 7]> {
            let id = w(1.0, r1, r1, options)?;
            let w12 = w(1.0, r1, r2, options)?;
            let w21 = w(1.0, r2, r1, options)?;
            let w23 = w(1.0, r2, r3, options)?;
            let w13 = w(2.0, r1, r3, &long)?;
            let half = w(0.5, r1, r2, options)?;
            let two = w(2.0, r1, r2, options)?;
            let rescaled = w(1.0, r1, r2, &scaled)?;
            let tol = [&id, &w12, &w21, &w23, &w13, &half, &two, &rescaled]
                .iter()
                .map(|s| s.value_tolerance)
                .fold(0.0, f64::max);
            Ok([
                id.value,
                (w13.value - w12.value - w23.value).max(0.0),
                (two.value - w12.value).max(0.0) + (w12.value - half.value).max(0.0),
                (w12.value - 2.0 / 3.0 * half.value - 1.0 / 3.0 * two.value).max(0.0),
                (w12.value - w21.value).abs(),
                (two.value - rescaled.value).abs(),
                tol,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = |k: usize| rows.iter().map(|r| r[k]).fold(0.0, f64::max);
    Ok(AxiomReport {
        samples,
        identity: worst(0),
        triangle: worst(1),
        monotonicity: worst(2),
        convexity: worst(3),
        symmetry: worst(4),
        scaling: worst(5),
        tolerance: worst(6),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{make_dissipation, ConstantConjugate, DissipationFamily};

    fn two_state() -> GraphSystem {
        GraphSystem::from_rows(&[0.5, 0.5], &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    fn three_state() -> GraphSystem {
        GraphSystem::from_rows(
            &[0.2, 0.3, 0.5],
            &[vec![0.0, 1.5, 2.5], vec![1.0, 0.0, 5.0], vec![1.0, 3.0, 0.0]],
        )
        .unwrap()
    }

    fn flat_quadratic() -> DissipationSpec {
        make_dissipation(&DissipationFamily::ConstantAlpha {
            alpha: 1.0,
            psi_star: ConstantConjugate::Quadratic,
        })
        .unwrap()
    }

    fn problem<'a>(
        system: &'a GraphSystem,
        spec: &'a DissipationSpec,
        u0: &[f64],
        u1: &[f64],
        tau: f64,
        options: DvtOptions,
    ) -> DvtProblem<'a> {
        DvtProblem {
            system,
            spec,
            tau,
            rho0: Measure::from_density(system, u0).unwrap(),
            rho1: Measure::from_density(system, u1).unwrap(),
            options,
        }
    }

    #[test]
    fn equal_endpoints_cost_nothing() {
        let s = three_state();
        let spec = DissipationSpec::cosh();
        let sol = dvt_cost(&problem(
            &s,
            &spec,
            &[1.2, 0.7, 1.1],
            &[1.2, 0.7, 1.1],
            1.0,
            DvtOptions::default(),
        ))
        .unwrap();
        assert!(sol.value.abs() < 1e-12);
        assert!(sol.curve.fluxes.iter().all(|f| f.total_variation() < 1e-12));
    }

    #[test]
    fn flat_quadratic_two_state_closed_form() {
        // constant w is optimal: mass m = 0.3 moved across theta = 1/2 in
        // time 1 costs m^2 / (2 theta tau)
        let s = two_state();
        let spec = flat_quadratic();
        let oracle = 0.3_f64.powi(2) / (2.0 * 0.5 * 1.0);
        for m in [1, 4, 16] {
            let opts = DvtOptions {
                intervals: m,
                ..DvtOptions::default()
            };
            let sol = dvt_cost(&problem(&s, &spec, &[1.6, 0.4], &[1.0, 1.0], 1.0, opts)).unwrap();
            assert!((sol.value - oracle).abs() < 1e-6, "M = {m}: {}", sol.value);
            assert!(sol.epsilon_monotone);
        }
    }

    #[test]
    fn continuity_constraint_is_exact() {
        let s = three_state();
        let spec = DissipationSpec::cosh();
        let sol = dvt_cost(&problem(
            &s,
            &spec,
            &[2.0, 0.5, 1.0],
            &[0.6, 1.4, 1.02],
            0.7,
            DvtOptions::default(),
        ))
        .unwrap();
        let ce = crate::graph::ce_residual(&s, &sol.curve).unwrap();
        assert!(ce.residual < 1e-10, "{}", ce.residual);
        for f in &sol.curve.fluxes {
            let sym = (&f.0 + f.0.transpose()).amax();
            assert!(sym <= 1e-8 * f.0.amax().max(1e-300));
        }
    }

    #[test]
    fn cosh_cost_below_quadratic_envelope() {
        // Psi_cosh'' = 1 / sqrt(1 + s^2 / 4) <= 1 = Psi_cosh''(0), so
        // Psi_cosh(s) <= s^2 / 2 and the cost with the same alpha is smaller
        let s = two_state();
        let cosh = DissipationSpec::cosh();
        let envelope = DissipationSpec::custom(
            crate::potentials::Conjugate::Quadratic,
            crate::potentials::Mean::Geometric { power: 1.0 },
        )
        .unwrap();
        let a = dvt_cost(&problem(
            &s,
            &cosh,
            &[1.6, 0.4],
            &[1.0, 1.0],
            1.0,
            DvtOptions::default(),
        ))
        .unwrap();
        let b = dvt_cost(&problem(
            &s,
            &envelope,
            &[1.6, 0.4],
            &[1.0, 1.0],
            1.0,
            DvtOptions::default(),
        ))
        .unwrap();
        assert!(a.value.is_finite() && a.value > 0.0);
        assert!(
            a.value <= b.value + a.value_tolerance + b.value_tolerance,
            "{} {}",
            a.value,
            b.value
        );
    }

    #[test]
    fn unequal_masses_are_infeasible() {
        let s = two_state();
        let spec = DissipationSpec::cosh();
        let e = dvt_cost(&problem(
            &s,
            &spec,
            &[1.0, 1.0],
            &[1.0, 1.2],
            1.0,
            DvtOptions::default(),
        ))
        .unwrap_err();
        assert!(matches!(e, Error::Infeasible(_)));
    }

    #[test]
    fn boundary_endpoint_is_reachable() {
        let s = three_state();
        let spec = DissipationSpec::cosh();
        let sol = dvt_cost(&problem(
            &s,
            &spec,
            &[5.0, 0.0, 0.0],
            &[1.0, 1.0, 1.0],
            1.0,
            DvtOptions::default(),
        ))
        .unwrap();
        assert!(sol.value.is_finite() && sol.value > 0.0);
    }

    #[test]
    fn w_action_of_constant_curve_is_zero() {
        let s = three_state();
        let spec = DissipationSpec::cosh();
        let m = Measure::from_density(&s, &[1.0, 2.0, 0.4]).unwrap();
        let times: Vec<f64> = (0..5).map(|k| k as f64 * 0.25).collect();
        let rep = w_action(
            &s,
            &spec,
            &times,
            &vec![m; 5],
            2,
            &DvtOptions {
                intervals: 2,
                ..DvtOptions::default()
            },
        )
        .unwrap();
        assert!(rep.value.abs() < 1e-12);
        assert!(rep.monotone);
    }

    #[test]
    fn feasible_curve_bounds_the_cost() {
        let s = two_state();
        let spec = flat_quadratic();
        let r0 = Measure::from_density(&s, &[1.6, 0.4]).unwrap();
        let r1 = Measure::from_density(&s, &[1.0, 1.0]).unwrap();
        let fc = feasible_curve(&s, &spec, &r0, &r1, 1.0, 2.0, 2.0, 64).unwrap();
        // int_0^1 (2t)^2 dt * 0.09 = 0.12 for the rescaled clock
        assert!(fc.bound >= 0.09 && fc.bound <= 0.18, "{}", fc.bound);
        assert!((fc.bound - 0.12).abs() < 1e-3);
        let ce = crate::graph::ce_residual(&s, &fc.curve).unwrap();
        assert!(ce.residual < 1e-14);
        let same = feasible_curve(&s, &spec, &r0, &r0, 1.0, 2.0, 2.0, 8).unwrap();
        assert_eq!(same.bound, 0.0);
    }

    #[test]
    fn feasible_curve_reports_disconnected_transfer() {
        let kappa = vec![
            vec![0.0, 1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ];
        let s = GraphSystem::from_rows(&[0.25; 4], &kappa).unwrap();
        let spec = flat_quadratic();
        let r0 = Measure::from_density(&s, &[1.5, 1.5, 0.5, 0.5]).unwrap();
        let r1 = Measure::from_density(&s, &[1.0; 4]).unwrap();
        let e = feasible_curve(&s, &spec, &r0, &r1, 1.0, 2.0, 2.0, 8).unwrap_err();
        assert!(matches!(e, Error::SingularLaplacian { .. }));
        assert!(matches!(poincare_constant(&s, 2.0, 0), Err(Error::Disconnected { .. })));
    }

    #[test]
    fn poincare_two_state_and_scaling() {
        let s = two_state();
        let p = poincare_constant(&s, 2.0, 0).unwrap();
        assert!(p.exact);
        assert!((p.value - 0.25).abs() < 1e-12);
        let k = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]];
        let k2: Vec<Vec<f64>> = k.iter().map(|r| r.iter().map(|x| 2.0 * x).collect()).collect();
        let a = GraphSystem::from_rows(&[1.0 / 3.0; 3], &k).unwrap();
        let b = GraphSystem::from_rows(&[1.0 / 3.0; 3], &k2).unwrap();
        let (pa, pb) = (
            poincare_constant(&a, 2.0, 0).unwrap(),
            poincare_constant(&b, 2.0, 0).unwrap(),
        );
        assert!((pb.value - 0.5 * pa.value).abs() < 1e-12);
    }

    #[test]
    fn poincare_lower_bound_for_other_exponents() {
        let s = three_state();
        let two = poincare_constant(&s, 2.0, 1).unwrap().value;
        let near = poincare_constant(&s, 2.0 + 1e-9, 1).unwrap();
        assert!(!near.exact);
        assert!((near.value - two).abs() < 1e-6 * two);
        // on two states every mean-zero xi is a multiple of one vector
        let t = two_state();
        let q = 3.0;
        let est = poincare_constant(&t, q, 1).unwrap().value;
        // xi = (a, -a): a^q / ((2a)^q * 1/2 * 2)
        assert!((est - 0.5f64.powf(q)).abs() < 1e-9);
    }

    #[test]
    fn axioms_hold_on_a_few_samples() {
        let s = three_state();
        let spec = DissipationSpec::cosh();
        let opts = DvtOptions {
            intervals: 4,
            ..DvtOptions::default()
        };
        let rep = cost_axioms_check(&s, &spec, 3, 7, &opts).unwrap();
        assert!(rep.identity <= 1e-10);
        assert!(rep.triangle <= 2.0 * rep.tolerance + 1e-10, "{rep:?}");
        assert!(rep.monotonicity <= rep.tolerance + 1e-10, "{rep:?}");
        assert!(rep.symmetry <= 2.0 * rep.tolerance + 1e-9, "{rep:?}");
        assert!(rep.scaling <= 2.0 * rep.tolerance + 1e-9, "{rep:?}");
    }
}
