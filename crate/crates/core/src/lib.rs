//! Gradient-gated selection of past data segments for training under
//! concept drift.

pub mod datagen;
pub mod drift;
pub mod error;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod scores;
pub mod segments;
pub mod selection;

pub use error::{Error, Result};
