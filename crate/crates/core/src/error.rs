use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("duplicate points: index {first} and index {second} have identical coordinates")]
    DuplicatePoints { first: usize, second: usize },

    /// A nearest-neighbor distance is too small for the fixed-width grid.
    #[error(
        "spread too large: point {point} needs quadtree level {level}, the grid supports at most {max}"
    )]
    SpreadTooLarge { point: usize, level: i64, max: u32 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("malformed index file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
