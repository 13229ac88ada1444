//! Generalized community structure in networks.
//!
//! Each node gets a posterior over a latent position in `[0, 1]` and edges
//! appear with probability `d_u d_v omega(x_u, x_v) / 2m`, where the edge
//! function `omega` is a symmetric nonnegative Bernstein expansion learned by
//! expectation-maximization. The E-step is belief propagation on the grid of
//! a Gauss-Legendre rule.

pub mod basis;
pub mod bp;
pub mod em;
pub mod error;
pub mod generate;
pub mod graph;
pub mod io;
pub mod oracle;

pub use basis::{
    basis_integrals, bernstein_eval, gauss_legendre_grid, BernsteinBasis, Coefficients,
    Discretization, EdgeFunction, QuadratureGrid,
};
pub use bp::{
    node_marginal, pair_marginal, run_bp, update_message, BeliefStore, BpConfig, BpOutcome,
    BpSchedule, PairMarginal,
};
pub use em::{compute_stats, fit, inner_em, objective, FitConfig, FitReport, MStepStats};
pub use error::{Error, Result};
pub use graph::{edge_probability, parse_edge_list, Graph, ParsedGraph};
