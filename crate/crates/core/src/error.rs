use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure classes, used by front ends to map errors onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed input: bad matrices, invalid model files, out-of-range arguments.
    Input,
    /// A modelling assumption does not hold for the supplied model.
    Assumption,
    /// A numerical procedure failed to converge or certify its result.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("entry ({row}, {col}) = {value} is not a finite nonnegative real")]
    NegativeEntry { row: usize, col: usize, value: Complex64 },

    #[error("exp matrix block size {0} exceeds the supported maximum of 20")]
    BlockTooLarge(usize),

    #[error("invalid offspring model: {0}")]
    InvalidModel(String),

    #[error("model parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("z = {z} lies outside the Laplace domain of entry ({row}, {col}) (abscissa {abscissa})")]
    DomainViolation {
        row: usize,
        col: usize,
        z: Complex64,
        abscissa: f64,
    },

    #[error("no Malthusian parameter: {0}")]
    NoMalthusian(String),

    #[error("Laplace domain exhausted while bracketing: {0}")]
    DomainExhausted(String),

    #[error("quadrature did not converge: {0}")]
    QuadratureNonConvergence(String),

    #[error("characteristic root on or too close to the contour: {0}")]
    RootOnBoundary(String),

    #[error("another singularity lies within twice the contour radius {radius} of {lambda}")]
    NearbySingularity { lambda: Complex64, radius: f64 },

    #[error("pole order could not be certified: {0}")]
    PoleOrder(String),

    #[error("Perron matrix is not primitive")]
    NotPrimitive,

    #[error("population cap of {0} individuals exceeded")]
    PopulationCap(usize),

    #[error("truncation bound {bound:e} exceeds tolerance {tolerance:e}; raise the tail cutoff")]
    Truncation { bound: f64, tolerance: f64 },

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("singular matrix")]
    Singular,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidMatrix(_)
            | Error::NonSquare { .. }
            | Error::NegativeEntry { .. }
            | Error::BlockTooLarge(_)
            | Error::InvalidModel(_)
            | Error::Parse { .. }
            | Error::TimeOutOfRange { .. }
            | Error::Precondition(_)
            | Error::Io(_) => ErrorClass::Input,
            Error::NoMalthusian(_) | Error::DomainExhausted(_) | Error::NotPrimitive => {
                ErrorClass::Assumption
            }
            Error::DomainViolation { .. }
            | Error::QuadratureNonConvergence(_)
            | Error::RootOnBoundary(_)
            | Error::NearbySingularity { .. }
            | Error::PoleOrder(_)
            | Error::PopulationCap(_)
            | Error::Truncation { .. }
            | Error::Singular => ErrorClass::Numerical,
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidMatrix(_) => "invalid_matrix",
            Error::NonSquare { .. } => "non_square",
            Error::NegativeEntry { .. } => "negative_entry",
            Error::BlockTooLarge(_) => "block_too_large",
            Error::InvalidModel(_) => "invalid_model",
            Error::Parse { .. } => "parse",
            Error::DomainViolation { .. } => "domain_violation",
            Error::NoMalthusian(_) => "no_malthusian_parameter",
            Error::DomainExhausted(_) => "domain_exhausted",
            Error::QuadratureNonConvergence(_) => "quadrature_non_convergence",
            Error::RootOnBoundary(_) => "root_on_boundary",
            Error::NearbySingularity { .. } => "nearby_singularity",
            Error::PoleOrder(_) => "pole_order",
            Error::NotPrimitive => "not_primitive",
            Error::PopulationCap(_) => "population_cap",
            Error::Truncation { .. } => "truncation",
            Error::TimeOutOfRange { .. } => "time_out_of_range",
            Error::Precondition(_) => "precondition",
            Error::Singular => "singular",
            Error::Io(_) => "io",
        }
    }
}
