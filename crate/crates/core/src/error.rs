use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A required column is absent from the data.
    #[error("schema error: column '{0}' is required but missing")]
    MissingColumn(String),

    /// A cell failed to parse as a finite number.
    #[error("parse error at data row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// A value-level contract was violated (binary treatment, row lengths, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A simulation or estimator configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A linear system was too ill-conditioned to solve.
    #[error("rank deficiency in {context}: condition estimate {condition:.3e}")]
    RankDeficient { context: String, condition: f64 },

    /// A moment system has fewer instruments than parameters.
    #[error("identification error in {system}: {parameters} parameters but only {instruments} instrument(s)")]
    Identification {
        system: String,
        parameters: usize,
        instruments: usize,
    },

    /// The saturated estimator found empty (a, x, z) cells.
    #[error("cell support error: empty cells {0:?}")]
    CellSupport(Vec<String>),

    /// A per-cell proxy table was numerically singular (completeness failure signal).
    #[error("near-singular proxy table for cell {cell}: |det| = {det:.3e}")]
    NearSingular { cell: String, det: f64 },

    /// A residual or intermediate value was NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Too many bootstrap replicates failed to converge.
    #[error("bootstrap inference unreliable: {failed} of {total} replicates failed")]
    InferenceUnreliable { failed: usize, total: usize },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
