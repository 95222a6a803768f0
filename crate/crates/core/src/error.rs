use thiserror::Error;

/// Errors produced by the solvers, certificates and pipelines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {context} (expected {expected}, found {found})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("rank deficient: need rank {required}, found {rank}")]
    RankDeficient { required: usize, rank: usize },

    #[error("infeasible program: {0}")]
    Infeasible(String),

    #[error("generator recovery failed: residual {residual:.3e} exceeds tolerance {tol:.1e}")]
    RecoveryFailed { residual: f64, tol: f64 },

    #[error("arrangement set is not provably complete")]
    IncompleteArrangements,

    #[error("solver diverged at iteration {iteration} (step {step})")]
    Diverged { iteration: usize, step: f64 },

    #[error("game is not stationary under arrangement refreezing (objective moved by {shift:.3e})")]
    NonStationary { shift: f64 },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dims(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch { context, expected, found }
    }

    /// Strips any `Stage` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
