//! Independent reference implementations for test suites.
//!
//! Everything here is deliberately written from scratch against textbook
//! formulas, sharing no code with the production solvers it cross-checks.

pub mod cost_integrals;
pub mod eigen;
pub mod gauss_seidel;

pub use cost_integrals::{truncated_exponential_costs, uniform_costs};
pub use eigen::symmetric_eigenvalues;
pub use gauss_seidel::{gauss_seidel_voltages, GsNetwork};
