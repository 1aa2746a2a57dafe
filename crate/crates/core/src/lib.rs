//! Numerical laboratory for the quadratic Schrödinger system
//!
//! ```text
//! i u_t + Δu = -2 v ū,    i v_t + κ Δv = -u²
//! ```
//!
//! on radially symmetric states in R^n, n <= 5: ground states by Weinstein
//! minimization, sharp Gagliardo–Nirenberg constants, conservative time
//! stepping with virial diagnostics, and the global-existence/blow-up
//! classification of initial data in five dimensions.

pub mod cli;
pub mod config;
pub mod dichotomy;
pub mod error;
pub mod evolution;
pub mod functionals;
pub mod ground_state;
pub mod radial_grid;
pub mod report;
pub mod sampling;
pub(crate) mod tridiag;
pub mod verify;

pub use error::{Error, Result};
pub use functionals::{FieldPair, FunctionalValues, SystemParams};
pub use radial_grid::{RadialField, RadialGrid};
