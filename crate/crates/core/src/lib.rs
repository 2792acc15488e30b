//! Generalized principal eigenvalues of elliptic operators
//! `a_i ∂_ii + b_i ∂_i + f` on `R^d` (`d = 1, 2`), their ground states and
//! ground-state (twisted) diffusions, together with Monte Carlo
//! Feynman–Kac machinery and risk-sensitive control by policy iteration.

pub mod beta;
pub mod control;
pub mod eigen;
pub mod exhaustion;
pub mod expr;
pub mod field;
pub mod grid;
pub mod probe;
pub mod sde;
pub mod sparse;
pub mod stats;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
