//! Command implementations behind the `emsaformer` binary.

pub mod bench;
pub mod commands;
pub mod error;
pub mod eval;
pub mod io;
pub mod synth;

pub use error::{CliError, CliResult};
