//! Continual reinforcement learning by rehearsal on two grid games.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod generative;
pub mod harness;
pub mod long_term;
pub mod nn;
pub mod rng;
pub mod short_term;
pub mod toyworld;

pub use error::{Error, Result};
