//! Generalized gradient flows for Markov jump processes on finite state
//! spaces.

// Negated comparisons reject NaN along with out-of-range values; index loops
// mirror the sums over states and edges.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

pub mod dvt;
pub mod error;
pub mod evolution;
pub mod ext;
pub mod functionals;
pub mod graph;
pub mod io;
pub mod jko;
pub mod ldp;
pub mod numerics;
pub mod potentials;

pub use dvt::{dvt_cost, DvtOptions, DvtProblem, DvtSolution};
pub use error::{Error, Result};
pub use evolution::{solve_forward, EvolveOptions, Trajectory};
pub use ext::ExtReal;
pub use functionals::{edb_deficit, energy, fisher, r_action, EDBReport};
pub use graph::{
    ce_residual, graph_div, graph_grad, tv_distance, CeReport, CurveWithFlux, Edge, Flux, GraphSystem, Measure,
};
pub use jko::{mm_solve, mm_step, MmRun};
pub use potentials::{make_dissipation, DissipationFamily, DissipationSpec, Entropy, EntropyFamily};
