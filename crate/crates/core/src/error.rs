use thiserror::Error;

/// Errors raised by the library. Each variant maps to one process exit code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("lattice not positively oriented: Im(tau) = {0}")]
    LatticeOrientation(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid family: {0}")]
    InvalidFamily(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("kind mismatch: {0}")]
    KindMismatch(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("not locally free here: {0}")]
    NotLocallyFree(String),
    #[error("evaluation nodes degenerate: condition number {0:.3e}")]
    NodesDegenerate(f64),
    #[error("pairing singular: |det P| = {det:.3e} below {threshold:.3e}")]
    PairingSingular { det: f64, threshold: f64 },
    #[error("closedness violation: relative defect {0:.3e}")]
    ClosednessViolation(f64),
    #[error("solver did not converge: {0}")]
    Solver(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code associated with the error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::LatticeOrientation(_)
            | Error::InvalidGrid(_)
            | Error::InvalidFamily(_)
            | Error::Config(_) => 2,
            Error::NotLocallyFree(_) => 3,
            Error::ShapeMismatch(_)
            | Error::KindMismatch(_)
            | Error::NodesDegenerate(_)
            | Error::PairingSingular { .. }
            | Error::ClosednessViolation(_)
            | Error::Solver(_)
            | Error::Io(_) => 4,
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::LatticeOrientation(_) => "lattice_orientation",
            Error::InvalidGrid(_) => "invalid_grid",
            Error::InvalidFamily(_) => "invalid_family",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::KindMismatch(_) => "kind_mismatch",
            Error::Config(_) => "invalid_config",
            Error::NotLocallyFree(_) => "not_locally_free",
            Error::NodesDegenerate(_) => "nodes_degenerate",
            Error::PairingSingular { .. } => "pairing_singular",
            Error::ClosednessViolation(_) => "closedness_violation",
            Error::Solver(_) => "solver_failure",
            Error::Io(_) => "io_failure",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
