//! Minimizing-movement scheme
//! `rho^n in argmin { W(tau, rho^{n-1}, mu) + E(mu) }`, the Moreau-Yosida
//! approximation `gen(r, rho)` and finite-`r` estimates of the generalized
//! slope.
//!
//! Each step is one transport solve with a free right endpoint and `E`
//! added to the objective, on the discretization described in [`crate::dvt`].

use crate::dvt::{DvtOptions, Engine};
use crate::error::{Error, Result};
use crate::functionals::energy;
use crate::graph::{tv_distance, CurveWithFlux, GraphSystem, Measure};
use crate::potentials::{DissipationSpec, Entropy};
use serde::Serialize;

/// Inner options for steps: 8 intervals and no smoothing of `alpha`.
pub fn step_options() -> DvtOptions {
    DvtOptions {
        intervals: 8,
        epsilon_schedule: vec![0.0],
        ..DvtOptions::default()
    }
}

#[derive(Debug, Clone)]
pub struct MmStep {
    pub measure: Measure,
    /// `W(tau, rho_prev, rho_next)` of the optimal inner curve.
    pub w_value: f64,
    pub energy: f64,
    /// Optimal inner curve on `[0, tau]`.
    pub curve: CurveWithFlux,
    pub kkt_residual: f64,
    /// Newton gap estimate of the inner solve.
    pub gap: f64,
    pub iterations: usize,
}

/// One step of the scheme from `rho_prev` with step `tau`.
pub fn mm_step(
    system: &GraphSystem,
    spec: &DissipationSpec,
    entropy: &Entropy,
    tau: f64,
    rho_prev: &Measure,
    options: &DvtOptions,
) -> Result<MmStep> {
    options.validate()?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau must be positive (got {tau})")));
    }
    if rho_prev.u.len() != system.n() {
        return Err(Error::Dimension("measure does not match the system".into()));
    }
    let engine = Engine::free(system, spec, entropy, tau, options, rho_prev);
    let out = engine.solve(options)?;
    let eps = *options.epsilon_schedule.last().expect("validated schedule");
    let curve = engine.curve(&out.x, 0.0)?;
    let measure = curve.states.last().expect("nonempty curve").clone();
    Ok(MmStep {
        w_value: engine.dissipation(&out.x, eps),
        energy: energy(entropy, system, &measure),
        measure,
        curve,
        kkt_residual: out.kkt_residual,
        gap: out.gap,
        iterations: out.iterations,
    })
}

/// Per-step diagnostics of a run.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub n: usize,
    pub t: f64,
    pub w_value: f64,
    pub energy: f64,
    /// `(E(rho^{n-1}) - W - E(rho^n)) / tau`, the slope quotient at
    /// `rho^{n-1}` for `r = tau`.
    pub slope_sample: f64,
    pub kkt_residual: f64,
    pub gap: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct MmRun {
    pub tau: f64,
    /// `rho^0..rho^N` at times `n tau`.
    pub steps: Vec<Measure>,
    pub records: Vec<StepRecord>,
    /// Optimal inner curves, concatenated.
    pub curve: CurveWithFlux,
    /// Sum of the inner gap estimates, the tolerance for the discrete
    /// energy inequality.
    pub accumulated_tolerance: f64,
    /// `sum W + E(rho^N) - E(rho^0)`, nonpositive up to the tolerance.
    pub discrete_edi_residual: f64,
    /// Every step satisfied `W + E(rho^n) <= E(rho^{n-1}) + gap`.
    pub per_step_edi: bool,
    pub energy_nonincreasing: bool,
}

impl MmRun {
    pub fn times(&self) -> Vec<f64> {
        (0..self.steps.len()).map(|n| n as f64 * self.tau).collect()
    }

    fn index_at(&self, t: f64, right: bool) -> usize {
        let s = t / self.tau;
        let k = if right { (s - 1e-9).ceil() } else { (s + 1e-9).floor() };
        (k.max(0.0) as usize).min(self.steps.len() - 1)
    }

    /// Right-continuous piecewise constant interpolant: `rho^n` on
    /// `((n-1) tau, n tau]`.
    pub fn right_interpolant(&self, t: f64) -> &Measure {
        &self.steps[self.index_at(t, true)]
    }

    /// Left piecewise constant interpolant: `rho^{n-1}` on
    /// `[(n-1) tau, n tau)`.
    pub fn left_interpolant(&self, t: f64) -> &Measure {
        &self.steps[self.index_at(t, false)]
    }

    /// Variational interpolant at `t`: the minimizer of
    /// `W(t - (n-1) tau, rho^{n-1}, mu) + E(mu)` for `t` in
    /// `((n-1) tau, n tau]`.
    pub fn variational_sample(
        &self,
        system: &GraphSystem,
        spec: &DissipationSpec,
        entropy: &Entropy,
        t: f64,
        options: &DvtOptions,
    ) -> Result<Measure> {
        let n = self.index_at(t, true);
        if n == 0 {
            return Ok(self.steps[0].clone());
        }
        let r = t - (n - 1) as f64 * self.tau;
        Ok(moreau_yosida(system, spec, entropy, r, &self.steps[n - 1], options)?.minimizer)
    }

    /// `sup_t TV(right interpolant, reference)` over the reference samples.
    pub fn sup_tv_gap(&self, times: &[f64], reference: &[Measure]) -> f64 {
        times
            .iter()
            .zip(reference)
            .map(|(&t, r)| tv_distance(&self.right_interpolant(t).rho, &r.rho))
            .fold(0.0, f64::max)
    }
}

/// Runs the scheme on `[0, t_end]` with `round(t_end / tau)` steps.
pub fn mm_solve(
    system: &GraphSystem,
    spec: &DissipationSpec,
    entropy: &Entropy,
    rho0: &Measure,
    t_end: f64,
    tau: f64,
    options: &DvtOptions,
) -> Result<MmRun> {
    if !(tau > 0.0 && t_end >= tau) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < tau <= t_end (got tau = {tau}, t_end = {t_end})"
        )));
    }
    let count = (t_end / tau).round() as usize;
    let mut steps = vec![rho0.clone()];
    let mut records = Vec::with_capacity(count);
    let mut curve = CurveWithFlux {
        times: vec![0.0],
        states: vec![rho0.clone()],
        fluxes: Vec::new(),
    };
    let e0 = energy(entropy, system, rho0);
    let mut e_prev = e0;
    let mut w_sum = 0.0;
    let mut tol = 0.0;
    let mut per_step = true;
    let mut nonincreasing = true;
    for n in 1..=count {
        let prev = steps.last().expect("nonempty");
        let st = mm_step(system, spec, entropy, tau, prev, options)?;
        let step_tol = st.gap + 1e-12 * e_prev.abs().max(1.0);
        if st.w_value + st.energy > e_prev + step_tol {
            per_step = false;
        }
        if st.energy > e_prev + step_tol {
            nonincreasing = false;
        }
        let t0 = (n - 1) as f64 * tau;
        for m in 0..st.curve.intervals() {
            curve.times.push(t0 + st.curve.times[m + 1]);
            curve.states.push(st.curve.states[m + 1].clone());
            curve.fluxes.push(st.curve.fluxes[m].clone());
        }
        records.push(StepRecord {
            n,
            t: n as f64 * tau,
            w_value: st.w_value,
            energy: st.energy,
            slope_sample: (e_prev - st.w_value - st.energy) / tau,
            kkt_residual: st.kkt_residual,
            gap: st.gap,
            iterations: st.iterations,
        });
        w_sum += st.w_value;
        tol += step_tol;
        e_prev = st.energy;
        steps.push(st.measure);
    }
    Ok(MmRun {
        tau,
        steps,
        records,
        curve,
        accumulated_tolerance: tol,
        discrete_edi_residual: w_sum + e_prev - e0,
        per_step_edi: per_step,
        energy_nonincreasing: nonincreasing,
    })
}

#[derive(Debug, Clone)]
pub struct MoreauYosida {
    /// `gen(r, rho) = W(r, rho, mu) + E(mu)` at the minimizer.
    pub value: f64,
    pub minimizer: Measure,
    pub w_value: f64,
    pub gap: f64,
}

pub fn moreau_yosida(
    system: &GraphSystem,
    spec: &DissipationSpec,
    entropy: &Entropy,
    r: f64,
    rho: &Measure,
    options: &DvtOptions,
) -> Result<MoreauYosida> {
    let st = mm_step(system, spec, entropy, r, rho, options)?;
    Ok(MoreauYosida {
        value: st.w_value + st.energy,
        minimizer: st.measure,
        w_value: st.w_value,
        gap: st.gap,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeEstimate {
    /// `max_r (E(rho) - gen(r, rho)) / r`, a lower estimate of the
    /// `limsup` as `r -> 0`.
    pub value: f64,
    /// `(r, gen(r, rho), quotient)` for each `r`.
    pub samples: Vec<(f64, f64, f64)>,
}

pub fn generalized_slope_estimate(
    system: &GraphSystem,
    spec: &DissipationSpec,
    entropy: &Entropy,
    rho: &Measure,
    r_list: &[f64],
    options: &DvtOptions,
) -> Result<SlopeEstimate> {
    if r_list.is_empty() || r_list.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::InvalidArgument("r_list must hold positive step sizes".into()));
    }
    if r_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("r_list must be decreasing".into()));
    }
    let e = energy(entropy, system, rho);
    let mut samples = Vec::with_capacity(r_list.len());
    for &r in r_list {
        let g = moreau_yosida(system, spec, entropy, r, rho, options)?;
        samples.push((r, g.value, (e - g.value) / r));
    }
    let value = samples.iter().map(|s| s.2).fold(f64::NEG_INFINITY, f64::max).max(0.0);
    Ok(SlopeEstimate { value, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::fisher;
    use crate::numerics::golden_section;
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

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let s = three_state();
        let rho = Measure::scaled_invariant(&s, 1.3);
        let st = mm_step(
            &s,
            &DissipationSpec::cosh(),
            &Entropy::boltzmann(),
            0.1,
            &rho,
            &step_options(),
        )
        .unwrap();
        assert!(st.w_value.abs() < 1e-12);
        assert!(tv_distance(&st.measure.rho, &rho.rho) < 1e-10);
    }

    #[test]
    fn flat_quadratic_step_matches_scalar_proximal_map() {
        // moving mass m from state 0 to 1 costs m^2 / (2 theta tau)
        let s = two_state();
        let spec = make_dissipation(&DissipationFamily::ConstantAlpha {
            alpha: 1.0,
            psi_star: ConstantConjugate::Quadratic,
        })
        .unwrap();
        let ent = Entropy::boltzmann();
        let tau = 0.3;
        let rho0 = Measure::from_masses(&s, &[0.8, 0.2]).unwrap();
        let obj = |m: f64| {
            let u = [2.0 * (0.8 - m), 2.0 * (0.2 + m)];
            m * m / (2.0 * 0.5 * tau) + 0.5 * (ent.phi(u[0]) + ent.phi(u[1]))
        };
        let (m_star, f_star) = golden_section(obj, 0.0, 0.3, 1e-12);
        let st = mm_step(&s, &spec, &ent, tau, &rho0, &step_options()).unwrap();
        assert!((st.measure.rho[0] - (0.8 - m_star)).abs() < 1e-6);
        assert!((st.w_value + st.energy - f_star).abs() < 1e-8);
    }

    #[test]
    fn cosh_step_decreases_energy() {
        let s = three_state();
        let ent = Entropy::boltzmann();
        let rho = Measure::from_density(&s, &[3.0, 0.5, 0.6]).unwrap();
        let st = mm_step(&s, &DissipationSpec::cosh(), &ent, 0.1, &rho, &step_options()).unwrap();
        assert!(st.energy < energy(&ent, &s, &rho));
        assert!((st.measure.mass() - rho.mass()).abs() < 1e-12);
    }

    #[test]
    fn boundary_data_step() {
        let s = three_state();
        let ent = Entropy::boltzmann();
        let rho = Measure::from_density(&s, &[5.0, 0.0, 0.0]).unwrap();
        let st = mm_step(&s, &DissipationSpec::cosh(), &ent, 0.1, &rho, &step_options()).unwrap();
        assert!(st.measure.u.iter().all(|&v| v > 0.0));
        assert!(st.energy < energy(&ent, &s, &rho));
    }

    #[test]
    fn run_satisfies_discrete_energy_inequality() {
        let s = three_state();
        let ent = Entropy::boltzmann();
        let rho = Measure::from_density(&s, &[3.0, 0.5, 0.6]).unwrap();
        let run = mm_solve(&s, &DissipationSpec::cosh(), &ent, &rho, 0.5, 0.1, &step_options()).unwrap();
        assert_eq!(run.steps.len(), 6);
        assert!(run.per_step_edi && run.energy_nonincreasing);
        assert!(run.discrete_edi_residual <= run.accumulated_tolerance);
        assert_eq!(run.curve.intervals(), 40);
        assert!(crate::graph::ce_residual(&s, &run.curve).unwrap().residual < 1e-10);
        assert_eq!(run.right_interpolant(0.1).rho, run.steps[1].rho);
        assert_eq!(run.right_interpolant(0.15).rho, run.steps[2].rho);
        assert_eq!(run.left_interpolant(0.15).rho, run.steps[1].rho);
        let v = run
            .variational_sample(&s, &DissipationSpec::cosh(), &ent, 0.2, &step_options())
            .unwrap();
        assert!(tv_distance(&v.rho, &run.steps[2].rho) < 1e-9);
    }

    #[test]
    fn moreau_yosida_monotone_in_r() {
        let s = three_state();
        let ent = Entropy::boltzmann();
        let spec = DissipationSpec::cosh();
        let rho = Measure::from_density(&s, &[3.0, 0.5, 0.6]).unwrap();
        let e = energy(&ent, &s, &rho);
        let g: Vec<f64> = [0.1, 0.01, 0.001]
            .iter()
            .map(|&r| moreau_yosida(&s, &spec, &ent, r, &rho, &step_options()).unwrap().value)
            .collect();
        assert!(g[0] <= g[1] && g[1] <= g[2] && g[2] <= e);
        assert!(e - g[2] < 0.1 * (e - g[0]));
    }

    #[test]
    fn slope_estimate_bounds_fisher_from_below() {
        let s = two_state();
        let ent = Entropy::boltzmann();
        let spec = DissipationSpec::cosh();
        let rho = Measure::from_density(&s, &[4.0, 1.0]).unwrap();
        let d = fisher(&spec, &ent, &s, &rho).to_f64();
        assert!((d - 1.0).abs() < 1e-12);
        let est = generalized_slope_estimate(&s, &spec, &ent, &rho, &[1e-2, 1e-3], &step_options()).unwrap();
        assert!(est.value >= 0.95 * d, "{est:?}");
        assert!(est.samples[1].2 >= est.samples[0].2);
        let eq = Measure::scaled_invariant(&s, 1.0);
        let zero = generalized_slope_estimate(&s, &spec, &ent, &eq, &[1e-2], &step_options()).unwrap();
        assert!(zero.value.abs() < 1e-10);
    }
}
