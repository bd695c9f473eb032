//! Pathwise numerics for noise-perturbed ODEs viewed as nonautonomous random
//! dynamical systems.

pub mod attractor;
pub mod cocycle;
pub mod conjugation;
pub mod driver;
pub mod error;
pub mod hyperbolic;
pub mod linalg;
pub mod manifold;
pub mod waveapp;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
