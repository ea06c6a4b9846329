use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symplectic: defect {defect:.3e} exceeds {tol:.3e}")]
    NotSymplectic { defect: f64, tol: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),

    #[error("eigenvalue modulus {modulus} lies in the ambiguous band around the unit circle")]
    AmbiguousSpectrum { modulus: f64 },

    #[error("eigenvalue computation did not converge")]
    EigenSolver,

    #[error("invalid symmetry: {0}")]
    InvalidSymmetry(String),

    #[error("path is not certified positive definite: {0}")]
    NotConvex(String),

    #[error("unresolved crossing near t = {time}: {passes} eigenphase passes but nullity {nullity}")]
    UnresolvedCrossing {
        time: f64,
        passes: i64,
        nullity: usize,
    },

    #[error("splitting numbers did not stabilize: {0:?}")]
    SplittingUnstable(Vec<(i64, i64)>),

    #[error("identity violated: {0}")]
    IdentityViolation(String),

    #[error("no convergence: {0}")]
    Convergence(String),

    #[error("orbit certification failed: {0}")]
    Certification(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
