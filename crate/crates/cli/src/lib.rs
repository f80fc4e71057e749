pub mod args;
pub mod config;
pub mod data;
pub mod error;
pub mod run;
pub mod synth;

pub use error::{CliError, CliResult};
pub use run::main_with;
