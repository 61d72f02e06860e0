//! Effective Hamiltonians for `u_t + G(u_x) + beta V(x / eps, omega) = 0` in one
//! space dimension, with `G` a double well and `V` stationary ergodic.

pub mod correctors;
pub mod crossings;
pub mod effective;
pub mod error;
pub mod flatset;
pub mod hamiltonian;
pub mod numerics;
pub mod pde_oracle;
pub mod potential;

pub use error::{Error, Result};
