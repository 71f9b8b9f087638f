//! q-optimal signed martingale measures on finite scenario trees.
//!
//! The discrete pipeline runs gain enumeration ([`market`]), the dual
//! projection and primal minimisation ([`projection`]), assembly of the
//! optimal density ([`solution`]) and its optimality certificate
//! ([`verify`]). [`diffusion`] checks the continuous univariate
//! characterisation by Monte Carlo, and [`cli`] wires everything into
//! reproducible command-line runs.

pub mod cli;
pub mod corpus;
pub mod diffusion;
pub mod error;
pub mod formats;
pub mod linalg;
pub mod market;
pub mod projection;
pub mod solution;
pub mod verify;

pub use error::{Error, Result};
