use thiserror::Error;

/// Errors produced by the simulation library.
///
/// The variants are grouped by how a caller is expected to react: input and
/// domain errors point at bad arguments or files, numerical errors at a
/// computation that could not be completed reliably.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("capability exceeded: {0}")]
    Capability(String),

    #[error("fit failed: {message} (residual {residual:.3e}, last iterate {last:?})")]
    Fit {
        message: String,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate Markov chain: kernel dimension {dimension}")]
    DegenerateChain {
        dimension: usize,
        basis: Vec<Vec<f64>>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// True for failures caused by the caller's data or configuration rather
    /// than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Input(_)
                | Error::Capability(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
