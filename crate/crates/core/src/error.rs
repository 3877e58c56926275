use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("buffer pool exhausted: needed {needed} bytes, freed {freed}")]
    Capacity { needed: u64, freed: u64 },

    #[error("object of {size} bytes exceeds pool capacity {capacity}")]
    TooLarge { size: u64, capacity: u64 },

    #[error("buffer object {0} not registered")]
    NotFound(u64),

    #[error("buffer object {0} already registered")]
    DuplicateId(u64),

    #[error("duplicate cell at {0:?}")]
    DuplicateCell(Vec<u64>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("type error: {0}")]
    Type(String),

    #[error("path error: {0}")]
    Path(String),

    #[error("plan error: {0}")]
    Plan(String),

    #[error("binding error: {0}")]
    Binding(String),

    #[error("invalid output spec: {0}")]
    Spec(String),

    #[error("parse error at {pos}: {msg}")]
    Parse { pos: SourcePos, msg: String },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("corrupt array file: {0}")]
    Format(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("partition {partition}: {source}")]
    InPartition { partition: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Line/column of a parse error, both 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SourcePos {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for SourcePos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.column)
    }
}

impl Error {
    pub fn parse(line: usize, column: usize, msg: impl Into<String>) -> Self {
        Error::Parse { pos: SourcePos { line, column }, msg: msg.into() }
    }
}
