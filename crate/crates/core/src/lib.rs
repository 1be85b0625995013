//! Decentralized personalized federated learning driven by unit representations.
//!
//! Clients probe each other's models with a shared constant input, compare the
//! resulting output distributions, and use the divergence to decide whether to
//! copy a peer outright or to aggregate layer-wise with a gated classifier head.

pub mod convergence;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod matrix;
pub mod nn;
pub mod protocol;
pub mod representation;
pub mod seed;

pub use error::{Error, Result};
pub use matrix::Matrix;
