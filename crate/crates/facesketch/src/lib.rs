//! Files, formats and drivers around `facesketch-core`: the dataset on disk,
//! region providers, checkpoints, the training loop, evaluation, reports and
//! the command line.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod detect;
pub mod error;
pub mod eval;
pub mod imageio;
pub mod report;
pub mod synthetic;
pub mod train;

pub use error::{Error, ErrorClass, Result};
