//! Sign structure and contraction hardness of random two-dimensional tensor
//! networks: shifted Haar ensembles, exact contraction, the Monte Carlo sign
//! metric Δf, boundary-state entanglement, the disorder-averaged spin models
//! that predict it, and positive-sum rewriting of PEPS norms.

pub mod boundary;
pub mod ensembles;
pub mod error;
pub mod gauge;
pub mod harness;
pub mod network;
pub mod peps;
pub mod rng;
pub mod separable;
pub mod sign_mc;
pub mod statmech;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
