//! Config parsing, named profiles and the `synth`, `train`, `eval`,
//! `transfer` and `sweep` commands.

pub mod config;
pub mod error;
pub mod profiles;
pub mod run;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use run::{run, Command, RunOutcome};
