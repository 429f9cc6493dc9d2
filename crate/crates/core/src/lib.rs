//! Exact and Monte Carlo checks of stochastic duality for interacting
//! particle systems and their diffusion counterparts.

pub mod algebra;
pub mod duality;
pub mod error;
pub mod exact;
pub mod lattice;
pub mod models;
pub mod polyops;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
pub use exact::{QMatrix, Rational};
