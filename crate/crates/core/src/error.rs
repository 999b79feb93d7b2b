use thiserror::Error;

/// Errors raised by mesh construction, assembly and the linear algebra layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid refinement level {0}: level must be at least 1")]
    InvalidLevel(u32),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("index ({row}, {col}) out of bounds for {nrows}x{ncols} matrix")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is singular{}", match .pivot { Some(p) => format!(" (pivot {p})"), None => String::new() })]
    Singular { pivot: Option<usize> },

    #[error("matrix market parse error: {0}")]
    MatrixMarket(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
