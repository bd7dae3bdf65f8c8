//! Learning the log principal eigenvector of the default representation (DR)
//! of gridworld MDPs from sampled transitions, with closed-form spectral
//! oracles and a potential-based reward shaping harness.

pub mod error;
pub mod evalkit;
pub mod matrix;
pub mod mdp;
pub mod nets;
pub mod objectives;
pub mod rng;
pub mod sampling;
pub mod shaping;
pub mod spectral;

pub use error::{Error, Result};
pub use matrix::DenseMatrix;
pub use mdp::{EncoderKind, GridLayout, GridWorld};
