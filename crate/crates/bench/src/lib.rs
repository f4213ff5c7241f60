//! Shared inputs for the benchmarks.

use ggflow::{GraphSystem, Measure};

/// Ring of `n` states with uniform `pi` and unit rates to both neighbours.
pub fn ring(n: usize) -> GraphSystem {
    let pi = vec![1.0 / n as f64; n];
    let mut kappa = vec![vec![0.0; n]; n];
    for (i, row) in kappa.iter_mut().enumerate() {
        row[(i + 1) % n] = 1.0;
        row[(i + n - 1) % n] = 1.0;
    }
    GraphSystem::from_rows(&pi, &kappa).expect("ring satisfies detailed balance")
}

/// A smooth positive bump on the ring, normalized to the mass of `pi`.
pub fn bump(system: &GraphSystem, phase: f64) -> Measure {
    let n = system.n();
    let u: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.8 * (2.0 * std::f64::consts::PI * i as f64 / n as f64 + phase).cos())
        .collect();
    Measure::from_density(system, &u).expect("positive density")
}
