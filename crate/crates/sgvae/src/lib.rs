//! File formats, dataset loading and the command-line jobs for
//! [`sgvae_core`].

pub mod artifacts;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod generate;
pub mod mnist;
pub mod pgm;
pub mod run;
pub mod spec_file;
pub mod verify;

pub use error::{Error, Result};
