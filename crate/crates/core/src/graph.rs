//! Finite graph systems with detailed balance and the graph calculus.
//!
//! A [`GraphSystem`] is a finite state space `V = {0, .., n-1}` carrying an
//! invariant measure `pi > 0` and a jump kernel `kappa` satisfying detailed
//! balance, so that the edge measure `theta[i][j] = pi[i] * kappa[i][j]` is
//! symmetric.
//!
//! ```text
//! (grad phi)(i, j) = phi[j] - phi[i]
//! (div j)(i)       = sum_k (j[i][k] - j[k][i])
//! <grad phi, j>    = -<phi, div j>
//! ```

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Default relative tolerance for the detailed-balance check.
pub const DEFAULT_TOL_DB: f64 = 1e-10;
const DB_ABS_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone)]
pub struct GraphSystem {
    pi: Vec<f64>,
    kappa: DMatrix<f64>,
    theta: DMatrix<f64>,
    kappa_sup: f64,
    edges: Vec<Edge>,
}

/// An undirected edge `i < j` with `theta_ij > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub theta: f64,
}

/// On-disk form of a system: `{"pi": [...], "kappa": [[...]]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub pi: Vec<f64>,
    pub kappa: Vec<Vec<f64>>,
}

impl GraphSystem {
    /// Validates `pi`, `kappa` and detailed balance, zeroes the diagonal of
    /// `kappa` and computes the edge measure `theta`.
    pub fn new(pi: Vec<f64>, kappa: DMatrix<f64>, tol_db: f64) -> Result<Self> {
        let n = pi.len();
        if n == 0 {
            return Err(Error::Dimension("empty state space".into()));
        }
        if kappa.nrows() != n || kappa.ncols() != n {
            return Err(Error::Dimension(format!(
                "pi has length {n} but kappa is {}x{}",
                kappa.nrows(),
                kappa.ncols()
            )));
        }
        for (index, &value) in pi.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::NonPositivePi { index, value });
            }
        }
        let mut kappa = kappa;
        for i in 0..n {
            for j in 0..n {
                let value = kappa[(i, j)];
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(Error::NegativeRate { i, j, value });
                }
            }
            // self-loops carry no dynamics since grad phi(x, x) = 0
            kappa[(i, i)] = 0.0;
        }
        let theta = DMatrix::from_fn(n, n, |i, j| pi[i] * kappa[(i, j)]);

        let mut worst: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (theta[(i, j)], theta[(j, i)]);
                let gap = (a - b).abs();
                let allowed = tol_db * (a + b + DB_ABS_FLOOR);
                if gap > allowed {
                    let excess = gap / (a + b);
                    if worst.is_none_or(|(w, _, _)| excess > w) {
                        worst = Some((excess, i, j));
                    }
                }
            }
        }
        if let Some((_, i, j)) = worst {
            return Err(Error::DetailedBalanceViolation {
                i,
                j,
                theta_ij: theta[(i, j)],
                theta_ji: theta[(j, i)],
            });
        }
        // store the exactly symmetric part
        let theta = DMatrix::from_fn(n, n, |i, j| 0.5 * (theta[(i, j)] + theta[(j, i)]));
        let kappa_sup = (0..n).map(|i| kappa.row(i).sum()).fold(0.0_f64, f64::max);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if theta[(i, j)] > 0.0 {
                    edges.push(Edge {
                        i,
                        j,
                        theta: theta[(i, j)],
                    });
                }
            }
        }
        Ok(Self {
            pi,
            kappa,
            theta,
            kappa_sup,
            edges,
        })
    }

    /// Convenience constructor from nested rows.
    pub fn from_rows(pi: &[f64], kappa: &[Vec<f64>]) -> Result<Self> {
        let n = pi.len();
        if kappa.len() != n || kappa.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension(format!(
                "pi has length {n} but kappa rows do not all have length {n}"
            )));
        }
        let m = DMatrix::from_fn(n, n, |i, j| kappa[i][j]);
        Self::new(pi.to_vec(), m, DEFAULT_TOL_DB)
    }

    pub fn from_file(file: &SystemFile) -> Result<Self> {
        Self::from_rows(&file.pi, &file.kappa)
    }

    pub fn to_file(&self) -> SystemFile {
        let n = self.n();
        SystemFile {
            pi: self.pi.clone(),
            kappa: (0..n).map(|i| (0..n).map(|j| self.kappa[(i, j)]).collect()).collect(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: SystemFile = serde_json::from_str(s)?;
        Self::from_file(&file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("system serializes")
    }

    pub fn n(&self) -> usize {
        self.pi.len()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn kappa(&self) -> &DMatrix<f64> {
        &self.kappa
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    /// `max_i sum_j kappa[i][j]`.
    pub fn kappa_sup(&self) -> f64 {
        self.kappa_sup
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn total_mass(&self) -> f64 {
        self.pi.iter().sum()
    }

    /// Connected components of the graph `{theta > 0}`, each sorted.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.n();
        let mut label = vec![usize::MAX; n];
        let mut comps = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut stack = vec![start];
            let mut comp = Vec::new();
            label[start] = id;
            while let Some(v) = stack.pop() {
                comp.push(v);
                for w in 0..n {
                    if label[w] == usize::MAX && self.theta[(v, w)] > 0.0 {
                        label[w] = id;
                        stack.push(w);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() == 1
    }

    /// Weighted graph Laplacian `L = diag(theta 1) - theta`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut l = -self.theta.clone();
        for i in 0..n {
            l[(i, i)] = self.theta.row(i).sum();
        }
        l
    }

    /// Generator `Q` of the linear master equation `du/dt = Q u`.
    pub fn generator(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut q = self.kappa.clone();
        for i in 0..n {
            q[(i, i)] = -self.kappa.row(i).sum();
        }
        q
    }
}

/// A nonnegative measure together with its density with respect to `pi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    pub rho: Vec<f64>,
    pub u: Vec<f64>,
}

impl Measure {
    pub fn from_density(system: &GraphSystem, u: &[f64]) -> Result<Self> {
        if u.len() != system.n() {
            return Err(Error::Dimension(format!(
                "density has length {} for a {}-state system",
                u.len(),
                system.n()
            )));
        }
        if let Some((i, &x)) = u.iter().enumerate().find(|(_, &x)| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "density u[{i}] = {x} is not a nonnegative number"
            )));
        }
        Ok(Self {
            rho: u.iter().zip(system.pi()).map(|(a, p)| a * p).collect(),
            u: u.to_vec(),
        })
    }

    pub fn from_masses(system: &GraphSystem, rho: &[f64]) -> Result<Self> {
        if rho.len() != system.n() {
            return Err(Error::Dimension(format!(
                "measure has length {} for a {}-state system",
                rho.len(),
                system.n()
            )));
        }
        if let Some((i, &x)) = rho.iter().enumerate().find(|(_, &x)| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "mass rho[{i}] = {x} is not a nonnegative number"
            )));
        }
        Ok(Self {
            u: rho.iter().zip(system.pi()).map(|(a, p)| a / p).collect(),
            rho: rho.to_vec(),
        })
    }

    /// `c * pi`.
    pub fn scaled_invariant(system: &GraphSystem, c: f64) -> Self {
        Self {
            rho: system.pi().iter().map(|p| c * p).collect(),
            u: vec![c; system.n()],
        }
    }

    pub fn mass(&self) -> f64 {
        self.rho.iter().sum()
    }
}

/// Total-variation norm `sum_i |a_i - b_i|` of the difference of two
/// measures given by their masses.
pub fn tv_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// A signed edge measure `j[i][j]` with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Flux(pub DMatrix<f64>);

impl Flux {
    pub fn zeros(n: usize) -> Self {
        Flux(DMatrix::zeros(n, n))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    /// Skew-symmetric part `(j - j^T) / 2`.
    pub fn skew(&self) -> Flux {
        Flux((&self.0 - self.0.transpose()) * 0.5)
    }

    /// Positive part `(j - j^T)_+` of the net flux.
    pub fn positive_net(&self) -> Flux {
        Flux((&self.0 - self.0.transpose()).map(|x| x.max(0.0)))
    }

    /// Scaled flux density `w[i][j] = 2 j[i][j] / theta[i][j]` (zero where
    /// `theta` vanishes).
    pub fn scaled_density(&self, system: &GraphSystem) -> DMatrix<f64> {
        let t = system.theta();
        DMatrix::from_fn(self.n(), self.n(), |i, j| {
            if t[(i, j)] > 0.0 {
                2.0 * self.0[(i, j)] / t[(i, j)]
            } else {
                0.0
            }
        })
    }

    /// `sum_ij |j[i][j]|`.
    pub fn total_variation(&self) -> f64 {
        self.0.iter().map(|x| x.abs()).sum()
    }
}

pub fn graph_grad(phi: &[f64]) -> DMatrix<f64> {
    let n = phi.len();
    DMatrix::from_fn(n, n, |i, j| phi[j] - phi[i])
}

pub fn graph_div(flux: &Flux) -> Vec<f64> {
    let j = &flux.0;
    (0..flux.n())
        .map(|i| (0..flux.n()).map(|k| j[(i, k)] - j[(k, i)]).sum())
        .collect()
}

/// A time-gridded curve of measures with one flux per grid interval,
/// held constant on that interval.
#[derive(Debug, Clone)]
pub struct CurveWithFlux {
    pub times: Vec<f64>,
    pub states: Vec<Measure>,
    pub fluxes: Vec<Flux>,
}

impl CurveWithFlux {
    pub fn check_grid(&self) -> Result<()> {
        if self.states.len() != self.times.len() {
            return Err(Error::GridMismatch(format!(
                "{} states for {} times",
                self.states.len(),
                self.times.len()
            )));
        }
        if self.fluxes.len() + 1 != self.times.len() {
            return Err(Error::GridMismatch(format!(
                "{} fluxes for {} grid intervals",
                self.fluxes.len(),
                self.times.len().saturating_sub(1)
            )));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::GridMismatch("times are not strictly increasing".into()));
        }
        Ok(())
    }

    pub fn intervals(&self) -> usize {
        self.fluxes.len()
    }

    /// Linear interpolation of the densities at the midpoint of interval `m`.
    pub fn midpoint_density(&self, m: usize) -> Vec<f64> {
        self.states[m]
            .u
            .iter()
            .zip(&self.states[m + 1].u)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn stationary(system: &GraphSystem, state: Measure, times: Vec<f64>) -> Self {
        let fluxes = vec![Flux::zeros(system.n()); times.len().saturating_sub(1)];
        let states = vec![state; times.len()];
        Self { times, states, fluxes }
    }
}

/// Outcome of a continuity-equation check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CeReport {
    /// `max_{k, m} |rho_{m+1}(k) - rho_m(k) + dt_m (div j_m)(k)|`.
    pub residual: f64,
    /// Whether `||rho_{m+1} - rho_m||_TV <= 2 dt_m |j_m|(E)` on every interval.
    pub tv_bound_holds: bool,
}

/// Integrated continuity equation tested against the indicator basis, which
/// spans all test functions on a finite state space.
pub fn ce_residual(system: &GraphSystem, curve: &CurveWithFlux) -> Result<CeReport> {
    curve.check_grid()?;
    let n = system.n();
    if curve.states.iter().any(|s| s.rho.len() != n) || curve.fluxes.iter().any(|f| f.n() != n) {
        return Err(Error::GridMismatch(
            "state or flux dimension differs from the system".into(),
        ));
    }
    let mut residual = 0.0_f64;
    let mut tv_ok = true;
    for m in 0..curve.intervals() {
        let dt = curve.times[m + 1] - curve.times[m];
        let div = graph_div(&curve.fluxes[m]);
        let (a, b) = (&curve.states[m].rho, &curve.states[m + 1].rho);
        let mut tv = 0.0;
        for k in 0..n {
            let delta = b[k] - a[k];
            tv += delta.abs();
            residual = residual.max((delta + dt * div[k]).abs());
        }
        let bound = 2.0 * dt * curve.fluxes[m].total_variation();
        let scale = a.iter().chain(b).map(|x| x.abs()).sum::<f64>().max(1.0);
        if tv > bound + 1e-9 * scale + n as f64 * residual {
            tv_ok = false;
        }
    }
    Ok(CeReport {
        residual,
        tv_bound_holds: tv_ok,
    })
}

/// Solves `L psi = b` on each connected component (with `sum b = 0` per
/// component), returning the solution with zero mean on each component.
pub(crate) fn solve_laplacian(system: &GraphSystem, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let comps = system.components();
    let lap = system.laplacian();
    let n = system.n();
    let scale = b.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
    for comp in &comps {
        let s: f64 = comp.iter().map(|&i| b[i]).sum();
        if s.abs() > tol * scale {
            return Err(Error::SingularLaplacian { components: comps });
        }
    }
    let mut psi = vec![0.0; n];
    for comp in &comps {
        let k = comp.len();
        if k == 1 {
            continue;
        }
        // ground the first vertex of the component
        let sub = DMatrix::from_fn(k - 1, k - 1, |a, c| lap[(comp[a + 1], comp[c + 1])]);
        let rhs = DVector::from_fn(k - 1, |a, _| b[comp[a + 1]]);
        let sol = sub.lu().solve(&rhs).ok_or_else(|| Error::SingularLaplacian {
            components: comps.clone(),
        })?;
        let mean = sol.iter().sum::<f64>() / k as f64;
        psi[comp[0]] = -mean;
        for a in 0..k - 1 {
            psi[comp[a + 1]] = sol[a] - mean;
        }
    }
    Ok(psi)
}
