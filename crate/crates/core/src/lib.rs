//! Multi-model analytic engine: relational, document and tiled array data
//! under one buffer pool, with inter-model joins between arrays and records.

pub mod array;
pub mod array_ops;
pub mod bridge;
mod error;
pub mod exec;
pub mod model;
pub mod planner;
pub mod pool;
pub mod rd;

pub use error::{Error, Result, SourcePos};
