//! Configuration, orchestration and reporting for the `gebsde` binary.

pub mod config;
pub mod error;
pub mod report;
pub mod run;

pub use config::{Overrides, RunConfig};
pub use error::CliError;
pub use report::{RunReport, Stage};
pub use run::{run, Command};
