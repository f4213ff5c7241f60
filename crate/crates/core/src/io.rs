//! CSV tables for curves, fluxes, edge diagnostics and particle events.
//!
//! | table      | columns                                          |
//! |------------|--------------------------------------------------|
//! | trajectory | `t, state_index, u, rho`                         |
//! | flux       | `t, i, j, w` (`t` is the interval midpoint)      |
//! | edges      | `t, i, j, u_i, u_j, w, upsilon, d_phi, b_phi`    |
//! | events     | `t, particle, from, to`                          |

use crate::error::Result;
use crate::functionals::EdgeRecord;
use crate::graph::{CurveWithFlux, GraphSystem};
use crate::ldp::Event;
use serde::Serialize;
use std::io::Write;

#[derive(Serialize)]
struct StateRow {
    t: f64,
    state_index: usize,
    u: f64,
    rho: f64,
}

#[derive(Serialize)]
struct FluxRow {
    t: f64,
    i: usize,
    j: usize,
    w: f64,
}

fn write_rows<W: Write, R: Serialize>(out: W, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory<W: Write>(out: W, curve: &CurveWithFlux) -> Result<()> {
    let rows = curve.times.iter().zip(&curve.states).flat_map(|(&t, s)| {
        s.u.iter().zip(&s.rho).enumerate().map(move |(k, (&u, &rho))| StateRow {
            t,
            state_index: k,
            u,
            rho,
        })
    });
    write_rows(out, rows)
}

/// Scaled flux densities `w = 2 j / theta` on ordered pairs `i < j` with
/// `theta_ij > 0`.
pub fn write_fluxes<W: Write>(out: W, system: &GraphSystem, curve: &CurveWithFlux) -> Result<()> {
    let mut rows = Vec::new();
    for (m, f) in curve.fluxes.iter().enumerate() {
        let t = 0.5 * (curve.times[m] + curve.times[m + 1]);
        let w = f.skew().scaled_density(system);
        for e in system.edges() {
            rows.push(FluxRow {
                t,
                i: e.i,
                j: e.j,
                w: w[(e.i, e.j)],
            });
        }
    }
    write_rows(out, rows)
}

pub fn write_edge_diagnostics<W: Write>(out: W, rows: &[EdgeRecord]) -> Result<()> {
    write_rows(out, rows)
}

pub fn write_events<W: Write>(out: W, events: &[Event]) -> Result<()> {
    write_rows(out, events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Flux, Measure};

    #[test]
    fn trajectory_and_flux_tables() {
        let s = GraphSystem::from_rows(&[0.5, 0.5], &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let mut f = Flux::zeros(2);
        f.0[(0, 1)] = 0.15;
        f.0[(1, 0)] = -0.15;
        let curve = CurveWithFlux {
            times: vec![0.0, 1.0],
            states: vec![
                Measure::from_density(&s, &[1.6, 0.4]).unwrap(),
                Measure::from_density(&s, &[1.0, 1.0]).unwrap(),
            ],
            fluxes: vec![f],
        };
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &curve).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,state_index,u,rho");
        assert_eq!(lines[1], "0.0,0,1.6,0.8");
        assert_eq!(lines.len(), 5);
        let mut buf = Vec::new();
        write_fluxes(&mut buf, &s, &curve).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "0.5,0,1,0.6");
    }
}
