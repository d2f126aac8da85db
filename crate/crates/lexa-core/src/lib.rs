//! Latent explorer-achiever agent: an autodiff engine, a recurrent
//! state-space world model learned from pixels, a disagreement-driven
//! explorer, a goal-image achiever and the toy environments they run in.
//!
//! Everything here needs only `alloc`. File formats, run directories and the
//! command line live in the `lexa` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod error;
pub mod achiever;
pub mod envs;
pub mod explorer;
pub mod imagination;
pub mod ndgrad;
pub mod orchestrator;
pub mod worldmodel;

pub use error::{Error, Result};
