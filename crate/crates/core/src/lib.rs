//! Numerical toolkit for Dirichlet problems driven by nonlocal operators
//! `Ψ(−Δ)` of subordinate Brownian motion on bounded intervals.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ap;
pub mod bernstein;
pub mod grid;
pub mod linear;
pub mod stochastic;
mod error;
pub mod quad;

pub use error::{Error, Result};
