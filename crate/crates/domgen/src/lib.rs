//! Dataset containers, checkpoints and the experiment pipeline around `domgen-core`.

pub mod error;
pub mod experiment;
pub mod formats;

pub use error::{Error, Result};
