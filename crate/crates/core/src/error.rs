use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage, used to tag errors raised inside [`crate::pipeline::restore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Support,
    Scan,
    Partition,
    EdgeFit,
    Smoothing,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Support => "support construction",
            Stage::Scan => "window scan",
            Stage::Partition => "partition of unity",
            Stage::EdgeFit => "local edge fit",
            Stage::Smoothing => "spectral smoothing",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("histogram has zero total mass")]
    EmptyHistogram,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index ({row}, {col}) out of range for a {size}x{size} grid")]
    IndexOutOfRange { row: usize, col: usize, size: usize },

    #[error("dimension mismatch: expected {expected}x{expected}, found {found}x{found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("support function vanishes on the whole window")]
    DegenerateSupport,

    #[error("point lies outside the support of the window")]
    OutsideSupport,

    #[error("weighted window mass must be positive, got {0}")]
    EmptyWindow(f64),

    #[error("spectral field is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("edge field reaches {value} at ({row}, {col}), above 1")]
    PartitionOverflow { value: f64, row: usize, col: usize },

    #[error("linear program failed: {0}")]
    LinearProgram(String),

    #[error("at least {needed} replicates are required, got {got}")]
    TooFewReplicates { needed: usize, got: usize },

    #[error("replicate {replicate} at multiplier {multiplier} failed: {source}")]
    Replicate {
        multiplier: u32,
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at(stage: Stage) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// True for errors caused by malformed input rather than numerics or I/O.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::InvalidInput(_)
            | Error::IndexOutOfRange { .. }
            | Error::DimensionMismatch { .. } => true,
            Error::Stage { source, .. } | Error::Replicate { source, .. } => {
                source.is_input_error()
            }
            _ => false,
        }
    }

    pub fn is_io_error(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Stage { source, .. } | Error::Replicate { source, .. } => source.is_io_error(),
            _ => false,
        }
    }
}
