//! Configuration ingestion, run orchestration, persistence and plots.

pub mod config;
pub mod io;
pub mod plot;
pub mod run;

pub use config::RunConfig;
pub use io::FieldDump;
pub use run::{ExitCode, RunError};
