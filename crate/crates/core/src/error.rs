use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid design: {0}")]
    Design(String),

    /// Rank deficiency or a vanishing pivot in a factorization.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Consecutive eigenvalues too close for the eigenvectors to be identified.
    #[error("near-degenerate eigenvalues: relative gap {gap:.3e} below {tol:.1e}")]
    NearDegenerateEigenvalues { gap: f64, tol: f64 },

    #[error("rank-deficient signal: smallest retained eigenvalue {smallest:.3e} vs largest {largest:.3e}")]
    RankDeficientSignal { smallest: f64, largest: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("ambiguous alignment: estimated columns {first} and {second} match reference column {reference} equally well")]
    AmbiguousAlignment {
        first: usize,
        second: usize,
        reference: usize,
    },

    #[error("numerical degeneracy: {0}")]
    Numerical(String),

    #[error("collinear regressors: {0}")]
    Collinear(String),

    #[error("index {index} out of range 1..={len} for {what}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("bandwidth {bandwidth} must be smaller than T = {t}")]
    Bandwidth { bandwidth: usize, t: usize },

    #[error("{failed} of {total} replications failed in cell {cell}")]
    TooManyFailures {
        cell: String,
        failed: usize,
        total: usize,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Process exit code: 2 usage/validation, 3 numerical degeneracy, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension(_)
            | Error::InvalidInput(_)
            | Error::Design(_)
            | Error::OutOfRange { .. }
            | Error::Bandwidth { .. }
            | Error::Parse(_) => 2,
            Error::Degenerate(_)
            | Error::NearDegenerateEigenvalues { .. }
            | Error::RankDeficientSignal { .. }
            | Error::Singular(_)
            | Error::AmbiguousAlignment { .. }
            | Error::Numerical(_)
            | Error::Collinear(_)
            | Error::TooManyFailures { .. } => 3,
            Error::Io { .. } => 4,
        }
    }

    /// Short machine-readable tag used in error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::InvalidInput(_) => "invalid_input",
            Error::Design(_) => "design",
            Error::Degenerate(_) => "degenerate_input",
            Error::NearDegenerateEigenvalues { .. } => "near_degenerate_eigenvalues",
            Error::RankDeficientSignal { .. } => "rank_deficient_signal",
            Error::Singular(_) => "singular",
            Error::AmbiguousAlignment { .. } => "ambiguous_alignment",
            Error::Numerical(_) => "numerical_degeneracy",
            Error::Collinear(_) => "collinearity",
            Error::OutOfRange { .. } => "out_of_range",
            Error::Bandwidth { .. } => "bandwidth",
            Error::TooManyFailures { .. } => "too_many_failures",
            Error::Io { .. } => "io",
            Error::Parse(_) => "parse",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
