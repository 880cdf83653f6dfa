//! Maximum-entropy transport on directed graphs.
//!
//! A [`prior::PriorChain`] describes a Markov law on paths; the Schrödinger
//! bridge ([`bridge::solve_schrodinger`]) is the law closest to it in
//! relative entropy with prescribed initial and final marginals. Over the
//! Boltzmann prior `exp(-l/T)`, temperature trades average path length
//! against path entropy.

pub mod bridge;
pub mod calibrate;
pub mod cli;
pub mod graph;
pub mod metrics;
pub mod oracle;
pub mod prior;
mod projective;

pub use bridge::{solve_schrodinger, BridgeError, BridgeSolution, Marginal, SolverConfig};
pub use calibrate::{calibrate_temperature, temperature_sweep, CalibrationError, Problem};
pub use graph::{load_graph, DirectedGraph, GraphError, NodeId, Path};
pub use metrics::{PathMass, PathMeasure};
pub use oracle::{oracle_bridge, OracleError};
pub use prior::{boltzmann_prior, PriorChain, PriorError, Temperature};
pub use projective::hilbert_distance;
