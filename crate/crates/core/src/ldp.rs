//! Independent particles jumping with rates `kappa`: exact simulation,
//! empirical measure and flux, the rate functional of the pair, and the
//! symmetrization identity linking it to the cosh dissipation.

use crate::error::{Error, Result};
use crate::graph::{CurveWithFlux, Flux, GraphSystem, Measure};
use crate::numerics::golden_section;
use crate::potentials::DissipationSpec;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    pub particle: usize,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub n: usize,
    pub t_end: f64,
    pub seed: u64,
    /// Initial state of each particle.
    pub initial: Vec<usize>,
    /// All jumps, ordered by time and then by particle.
    pub events: Vec<Event>,
}

/// Exact simulation of `n` independent particles on `[0, t_end]`, started
/// from i.i.d. draws of `rho0 / |rho0|`. Particle `k` uses stream `k` of a
/// ChaCha8 generator keyed by `seed`, so the result does not depend on the
/// number of threads.
pub fn gillespie(system: &GraphSystem, rho0: &Measure, n: usize, t_end: f64, seed: u64) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one particle".into()));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("t_end must be positive (got {t_end})")));
    }
    if rho0.rho.len() != system.n() {
        return Err(Error::Dimension("initial measure does not match the system".into()));
    }
    let start = WeightedIndex::new(&rho0.rho)
        .map_err(|e| Error::InvalidArgument(format!("initial measure cannot be sampled: {e}")))?;
    let kappa = system.kappa();
    let states = system.n();
    let exit: Vec<f64> = (0..states).map(|i| kappa.row(i).sum()).collect();
    let jumps: Vec<Option<WeightedIndex<f64>>> = (0..states)
        .map(|i| WeightedIndex::new(kappa.row(i).iter().copied()).ok())
        .collect();
    let per_particle: Vec<(usize, Vec<Event>)> = (0..n)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let first = start.sample(&mut rng);
            let mut x = first;
            let mut t = 0.0;
            let mut events = Vec::new();
            while let Some(choice) = jumps[x].as_ref() {
                let wait: f64 = rng.sample(Exp1);
                t += wait / exit[x];
                if t > t_end {
                    break;
                }
                let y = choice.sample(&mut rng);
                events.push(Event {
                    t,
                    particle: p,
                    from: x,
                    to: y,
                });
                x = y;
            }
            (first, events)
        })
        .collect();
    let initial = per_particle.iter().map(|(s, _)| *s).collect();
    let mut events: Vec<Event> = per_particle.into_iter().flat_map(|(_, e)| e).collect();
    events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.particle.cmp(&b.particle)));
    Ok(ParticleEnsemble {
        n,
        t_end,
        seed,
        initial,
        events,
    })
}

/// Empirical measures at the bin edges and jump counts per bin.
#[derive(Debug, Clone)]
pub struct EmpiricalPath {
    pub times: Vec<f64>,
    /// `(1/n) #{particles in i}` at each bin edge.
    pub measures: Vec<Measure>,
    /// `(1/n) #{jumps i -> j}` in each bin (a mass, not a rate).
    pub flux_masses: Vec<Flux>,
}

impl EmpiricalPath {
    /// The path as a curve with piecewise constant flux rates.
    pub fn curve(&self) -> CurveWithFlux {
        let fluxes = self
            .flux_masses
            .iter()
            .zip(self.times.windows(2))
            .map(|(f, w)| Flux(&f.0 / (w[1] - w[0])))
            .collect();
        CurveWithFlux {
            times: self.times.clone(),
            states: self.measures.clone(),
            fluxes,
        }
    }
}

/// Bins the ensemble on the grid `bins` (increasing, inside `[0, t_end]`).
/// Events in `[t_k, t_{k+1})` are attributed to bin `k`.
pub fn empirical_path(system: &GraphSystem, ensemble: &ParticleEnsemble, bins: &[f64]) -> Result<EmpiricalPath> {
    if bins.len() < 2 || bins.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::GridMismatch(
            "bin edges must be increasing with at least two entries".into(),
        ));
    }
    if bins[0] < 0.0 || *bins.last().expect("nonempty") > ensemble.t_end {
        return Err(Error::GridMismatch(format!(
            "bins must lie inside [0, {}]",
            ensemble.t_end
        )));
    }
    let states = system.n();
    let scale = 1.0 / ensemble.n as f64;
    let mut counts = vec![0usize; states];
    for &s in &ensemble.initial {
        counts[s] += 1;
    }
    let to_measure = |c: &[usize]| {
        let rho: Vec<f64> = c.iter().map(|&k| k as f64 * scale).collect();
        Measure::from_masses(system, &rho)
    };
    let mut ev = ensemble.events.iter().peekable();
    // advance to the first edge
    while let Some(e) = ev.peek() {
        if e.t >= bins[0] {
            break;
        }
        counts[e.from] -= 1;
        counts[e.to] += 1;
        ev.next();
    }
    let mut measures = vec![to_measure(&counts)?];
    let mut flux_masses = Vec::with_capacity(bins.len() - 1);
    for w in bins.windows(2) {
        let mut f = Flux::zeros(states);
        while let Some(e) = ev.peek() {
            if e.t >= w[1] {
                break;
            }
            counts[e.from] -= 1;
            counts[e.to] += 1;
            f.0[(e.from, e.to)] += scale;
            ev.next();
        }
        flux_masses.push(f);
        measures.push(to_measure(&counts)?);
    }
    Ok(EmpiricalPath {
        times: bins.to_vec(),
        measures,
        flux_masses,
    })
}

/// `c eta(j / c)` with `eta(s) = s log s - s + 1`, extended by `0` at
/// `j = c = 0` and `+inf` for `c = 0 < j`.
fn eta_perspective(j: f64, c: f64) -> f64 {
    if c <= 0.0 {
        return if j == 0.0 { 0.0 } else { f64::INFINITY };
    }
    if j == 0.0 {
        return c;
    }
    j * (j / c).ln() - j + c
}

/// Binned rate functional
/// `sum_k sum_{i != j} c_ij eta(J_ij / c_ij)`, `c_ij = dt_k rho_i kappa_ij`,
/// where `rho` is the average of the measures at the two bin edges and
/// `J` the flux mass of the bin.
pub fn rate_i(system: &GraphSystem, times: &[f64], measures: &[Measure], flux_masses: &[Flux]) -> Result<f64> {
    if measures.len() != times.len() || flux_masses.len() + 1 != times.len() {
        return Err(Error::GridMismatch(format!(
            "{} times, {} measures, {} flux bins",
            times.len(),
            measures.len(),
            flux_masses.len()
        )));
    }
    let kappa = system.kappa();
    let states = system.n();
    let mut total = 0.0;
    for k in 0..flux_masses.len() {
        let dt = times[k + 1] - times[k];
        for i in 0..states {
            let rho = 0.5 * (measures[k].rho[i] + measures[k + 1].rho[i]);
            for j in 0..states {
                if i != j {
                    total += eta_perspective(flux_masses[k].0[(i, j)], dt * rho * kappa[(i, j)]);
                }
            }
        }
    }
    Ok(total)
}

/// `inf { c eta(a / c) + d eta(b / d) : a - b = 2 s }` in closed form,
/// `(sqrt(cd) / 2) (Psi(2 s / sqrt(cd)) + Psi*(log(c / d))) + s log(d / c)`
/// with the cosh pair `Psi*(xi) = 4 (cosh(xi / 2) - 1)`.
pub fn psi_closed_form(s: f64, c: f64, d: f64) -> f64 {
    let spec = DissipationSpec::cosh();
    let g = (c * d).sqrt();
    let l = (d / c).ln();
    0.5 * g * (spec.psi(2.0 * s / g) + spec.psi_star(-l)) + s * l
}

/// The same infimum by golden-section search over `a >= max(0, 2 s)`.
pub fn psi_brute_force(s: f64, c: f64, d: f64) -> f64 {
    let lo = (2.0 * s).max(0.0);
    let hi = lo + 2.0 * (s.abs() + c + d) + 1.0;
    let f = |a: f64| eta_perspective(a, c) + eta_perspective((a - 2.0 * s).max(0.0), d);
    golden_section(f, lo, hi, 1e-12).1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiComparison {
    pub closed_form: f64,
    pub brute_force: f64,
}

pub fn psi_reduction(s: f64, c: f64, d: f64) -> Result<PsiComparison> {
    if !(c > 0.0 && d > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "c and d must be positive (got {c}, {d})"
        )));
    }
    Ok(PsiComparison {
        closed_form: psi_closed_form(s, c, d),
        brute_force: psi_brute_force(s, c, d),
    })
}
