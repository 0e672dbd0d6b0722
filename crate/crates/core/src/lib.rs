//! Reduced density matrices, N-representability conditions, and variational
//! lower bounds for fermionic Hamiltonians in small orbital spaces.

pub mod basis;
pub mod cli;
pub mod conditions;
pub mod error;
pub mod fock;
pub mod hamiltonians;
pub mod opalg;
pub mod oracle;
pub mod solver;

pub use error::{Error, Result};
