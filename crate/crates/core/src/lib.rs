//! Quantum and classical Liouville dynamics of two coupled, periodically
//! kicked spins, with tools to measure how quickly the two descriptions
//! drift apart.
//!
//! Module map:
//! - [`quantum_spin`]: d-matrices, coherent states, the factored Floquet step.
//! - [`classical_map`]: the stroboscopic map on S^2 x S^2, tangent map,
//!   Lyapunov exponents, fixed-point stability, regime scans.
//! - [`liouville`]: coherent-state matched densities and Monte Carlo
//!   ensembles.
//! - [`correspondence`]: difference series, growth fits, break-times.
//! - [`cli`]: configuration parsing and the batch driver behind the
//!   `spinchaos` binary.

pub mod classical_map;
pub mod cli;
pub mod correspondence;
pub mod csvfmt;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod liouville;
pub mod quantum_spin;
pub mod rng;

pub use error::{Error, Result};
pub use exec::Exec;
