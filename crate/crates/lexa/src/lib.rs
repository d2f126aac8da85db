//! Run tooling for the latent explorer-achiever agent: checkpoint and
//! episode file formats, training runs on disk, evaluation and exports.

pub mod checkpoint;
pub mod cli;
pub mod documents;
pub mod episode_file;
pub mod error;
pub mod eval;
pub mod export;
pub mod metrics;
pub mod run;

pub use error::{LexaError, Result};
