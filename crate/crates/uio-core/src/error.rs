use nalgebra::Complex;

/// Errors produced by the observer design and data handling routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("matrix entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid tolerance: {0}")]
    InvalidTolerance(String),

    #[error("singular value decomposition did not converge")]
    SvdFailure,

    #[error("eigenvalue computation did not converge")]
    EigenFailure,

    #[error("pole list is not closed under complex conjugation")]
    PolesNotConjugateClosed,

    #[error("expected {expected} poles for the observable part, got {got}")]
    PoleCountMismatch { expected: usize, got: usize },

    #[error("pair is not detectable; offending eigenvalues: {offending:?}")]
    NotDetectable { offending: Vec<Complex<f64>> },

    #[error("pole placement failed: {0}")]
    PlacementFailure(String),

    #[error("matrix pencil is numerically singular for every shift tried")]
    SingularPencil,

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("{path}:{line}: {message}")]
    CsvFormat {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: column '{column}': {message}")]
    CsvValue {
        path: String,
        line: usize,
        column: String,
        message: String,
    },

    #[error("trajectory is invalid: {0}")]
    InvalidTrajectory(String),

    #[error("system model is invalid: {0}")]
    InvalidSystem(String),

    #[error("random system generation exhausted its retry budget ({budget} draws)")]
    GenerationBudgetExhausted { budget: usize },

    #[error("state data matrix Xp is row-rank deficient (rank {rank}, need {needed}); the full-row-rank data assumption does not hold")]
    XpRankDeficient { rank: usize, needed: usize },

    #[error("recovered output matrix does not reproduce the output data (residual {residual:.3e})")]
    OutputRecoveryResidual { residual: f64 },

    #[error("design equation has no exact solution (residual {residual:.3e}); the kernel inclusion condition is violated")]
    DesignEquationResidual { residual: f64 },

    #[error("no solution with a detectable pair found within {budget} draws; best candidate fails at eigenvalues {offending:?}")]
    DetectableSearchExhausted {
        budget: usize,
        offending: Vec<Complex<f64>>,
    },

    #[error("observer dynamics matrix is not Schur stable (spectral radius {spectral_radius})")]
    NotSchur { spectral_radius: f64 },

    #[error("no unknown-input observer exists for these data: {condition} fails")]
    ObserverNonexistent { condition: &'static str },

    #[error("observer is not valid for this system: {condition} residual {residual:.3e} exceeds tolerance")]
    InvalidObserver { condition: &'static str, residual: f64 },

    #[error("invalid signal specification: {0}")]
    InvalidSignal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
