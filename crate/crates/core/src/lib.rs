//! Distilling graph neural network teachers into Fourier-KAN students with
//! attention-driven edge sampling.

pub mod bench;
pub mod error;
pub mod graphio;
pub mod metrics;
pub mod numkit;
pub mod sadsd;
pub mod students;
pub mod teachers;

pub use error::{Error, Result};
