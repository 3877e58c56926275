//! Query scripts, dataset ingestion and the benchmark harness behind the
//! `mmdb` command.

pub mod bench;
pub mod bind;
mod error;
pub mod ingest;
pub mod run;
pub mod script;

pub use error::{CliError, Result};
