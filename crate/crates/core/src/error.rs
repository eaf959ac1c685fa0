use thiserror::Error;

/// Errors raised while reading or validating binary data.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("input has no header row")]
    MissingHeader,
    #[error("duplicate column name {0:?}")]
    DuplicateName(String),
    #[error("line {line}: expected {expected} cells, found {found}")]
    Ragged { line: usize, expected: usize, found: usize },
    #[error("line {line}, column {column:?}: cell {value:?} is not 0 or 1")]
    NonBinary { line: usize, column: String, value: String },
    #[error("dataset has no rows")]
    Empty,
    #[error("matrix has {len} entries, expected {n} x {d}")]
    Shape { len: usize, n: usize, d: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Errors raised when parameters, partitions, or models are inconsistent.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("variable {index}: alpha {value} is outside (0, 1)")]
    Alpha { index: usize, value: f64 },
    #[error("variable {index}: epsilon {value} is outside [0, 1)")]
    Epsilon { index: usize, value: f64 },
    #[error("variable {index}: delta {value} is not 0 or 1")]
    Delta { index: usize, value: u8 },
    #[error("outcome has {found} entries, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("partition covers {found} variables, expected {expected}")]
    PartitionSize { expected: usize, found: usize },
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("variable {0:?} appears in more than one block")]
    RepeatedVariable(String),
    #[error("variable {0:?} is not assigned to any block")]
    UnassignedVariable(String),
    #[error("empty block in partition")]
    EmptyBlock,
    #[error(
        "merged component of {size} variables exceeds the enumeration cap of {cap}; use a Monte Carlo estimate instead"
    )]
    ComponentTooLarge { size: usize, cap: usize },
    #[error("invalid model document: {0}")]
    Document(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
