use thiserror::Error;

/// Errors raised by the numerical routines and the experiment driver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("generator matrix must be square and non-empty (got {rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("generator entry q[{0}][{1}] is negative off the diagonal")]
    NegativeOffDiagonal(usize, usize),
    #[error("generator row {0} does not sum to zero")]
    RowSumNonZero(usize),
    #[error("non-finite result: {0}")]
    NonFiniteResult(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("stability index {0} is not below 2")]
    IndexOutOfRange(f64),
    #[error("density is undefined at z = 0")]
    DomainError,
    #[error("synchronous jump queried on the diagonal ({0},{0})")]
    DiagonalQuery(usize),
    #[error("adaptive quadrature did not converge: {0}")]
    QuadratureFailure(String),
    #[error("cubic basis requires a finite-variation measure (alpha = {0})")]
    UnsupportedBasisForMeasure(f64),
    #[error("barrier log-level {barrier} lies outside the domain [{x_min}, {x_max}]")]
    BarrierOutsideDomain { barrier: f64, x_min: f64, x_max: f64 },
    #[error("collocation system is singular")]
    SingularSystem,
    #[error("Fourier inversion did not converge: {0}")]
    InversionNotConverged(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("invalid config field `{0}`")]
    ValidationError(String),
    #[error("reference probability too small for a relative error")]
    ZeroReference,
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Variant name, used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotSquare { .. } => "NotSquare",
            Error::NegativeOffDiagonal(..) => "NegativeOffDiagonal",
            Error::RowSumNonZero(_) => "RowSumNonZero",
            Error::NonFiniteResult(_) => "NonFiniteResult",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::IndexOutOfRange(_) => "IndexOutOfRange",
            Error::DomainError => "DomainError",
            Error::DiagonalQuery(_) => "DiagonalQuery",
            Error::QuadratureFailure(_) => "QuadratureFailure",
            Error::UnsupportedBasisForMeasure(_) => "UnsupportedBasisForMeasure",
            Error::BarrierOutsideDomain { .. } => "BarrierOutsideDomain",
            Error::SingularSystem => "SingularSystem",
            Error::InversionNotConverged(_) => "InversionNotConverged",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::ParseError { .. } => "ParseError",
            Error::ValidationError(_) => "ValidationError",
            Error::ZeroReference => "ZeroReference",
            Error::Io(_) => "Io",
        }
    }

    /// Configuration problems, as opposed to numerical failures.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::ParseError { .. } | Error::ValidationError(_) | Error::InvalidParameter(_) | Error::Io(_)
        )
    }
}
