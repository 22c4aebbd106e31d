//! Numerics for two-scale stochastic volatility systems: ergodic cell
//! problems, effective Hamiltonians, the limit Hamilton-Jacobi equation,
//! rate functions, Monte Carlo and the full two-scale PDE.

pub mod cell;
pub mod effham;
pub mod epspde;
pub mod error;
pub mod export;
pub mod families;
pub mod grid;
pub mod hj;
pub mod ldp;
pub mod linalg;
pub mod mc;
pub mod measure;
pub mod model;
pub mod payoff;
pub mod stencil;

pub use error::{Error, Result};
