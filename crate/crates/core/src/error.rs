use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("matrix is not Hermitian: |H[{row}][{col}] - conj(H[{col}][{row}])| = {deviation:e} exceeds {tolerance:e}")]
    NonHermitian {
        row: usize,
        col: usize,
        deviation: f64,
        tolerance: f64,
    },

    #[error(
        "ill-conditioned fit: parameters `{first}` and `{second}` are not separately identifiable"
    )]
    IllConditioned { first: String, second: String },

    #[error("not enough data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("no field within the search domain reproduces the frequencies (best rms misfit {best_residual_hz:.1} Hz)")]
    NoSolution { best_residual_hz: f64 },

    #[error(
        "axial model violated: |nu2 - nu1 - 4D| = {residual_hz:.1} Hz exceeds {tolerance_hz:.1} Hz"
    )]
    AxialModelViolated { residual_hz: f64, tolerance_hz: f64 },

    #[error("empty input")]
    EmptyInput,

    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
