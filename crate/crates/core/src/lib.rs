//! Safe multi-agent reinforcement learning: constrained Markov games, exact
//! tabular analysis, trust-region machinery and the trainers built on it.

pub mod cmg;
pub mod envs;
pub mod error;
pub mod estimation;
pub mod nn;
pub mod oracle;
pub mod rng;
pub mod safe_iteration;
pub mod serde_util;
pub mod solver;
pub mod tolerance;
pub mod trainers;
pub mod verify;

pub use error::{Error, Result};
