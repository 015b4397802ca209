//! Graph neural networks with random node identifiers, the ICON invariance
//! regularizer, and the tooling around them: a small reverse-mode autodiff
//! engine, message-passing layers, synthetic tasks, exact constructions and a
//! training harness.

pub mod constructive;
pub mod error;
pub mod graph;
pub mod icon;
pub mod ids;
pub mod invariance;
pub mod layers;
pub mod metrics;
pub mod optim;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
