use thiserror::Error;

/// Errors produced by the solver and sampling layers.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("inconsistent legacy couplings: GRW route gives {grw_route:.6e}, CSL route gives {csl_route:.6e} (relative mismatch {rel:.3e})")]
    InconsistentCouplings {
        grw_route: f64,
        csl_route: f64,
        rel: f64,
    },

    #[error("lambda = 0: collapse unit scales undefined, use free-particle units")]
    FreeParticleUnits,

    #[error("tabulated kernel lookup out of range: t = {0}")]
    KernelRange(f64),

    #[error("covariance matrix is not positive semi-definite: min eigenvalue {min_eig:.3e} (tolerance {tol:.3e})")]
    NotPositiveSemiDefinite { min_eig: f64, tol: f64 },

    #[error("kernel matrix asymmetry {0:.3e} exceeds tolerance")]
    AsymmetricKernel(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("ill-posed discrete system: condition estimate {cond:.3e} exceeds 1e12; the boundary-value problem is expected to be uniquely solvable for symmetric positive-semidefinite kernels")]
    IllPosed { cond: f64 },

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("degenerate closed-form parameters: {0}")]
    Degenerate(String),

    #[error("operation requires a smooth noise with an exact second derivative; sampled paths are nowhere differentiable, route through the discretized boundary-value solver instead")]
    NonSmoothNoise,

    #[error("singular Gaussian map: alpha0 + A_t vanishes")]
    SingularMap,

    #[error("state is not normalizable: Re(alpha) = {0:.3e} <= 0")]
    NonNormalizable(f64),

    #[error("{flagged} of {total} paths flagged ({percent:.3}% > 0.1% limit)")]
    TooManyFlaggedPaths {
        flagged: usize,
        total: usize,
        percent: f64,
    },

    #[error("invalid comparison: {0}")]
    InvalidComparison(String),

    #[error("config error: {0}")]
    Config(String),
}

impl From<ndarray_linalg::error::LinalgError> for CoreError {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        CoreError::Linalg(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
