use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("metric density must be strictly positive (component {component}, node {node}, value {value})")]
    NonPositiveDensity { component: usize, node: usize, value: f64 },

    #[error("eigensolver did not converge (max residual {max_residual:.3e})")]
    EigenNonConvergence { max_residual: f64 },

    #[error("energy {lambda} lies within {window:.3e} of threshold {threshold}")]
    ThresholdProximity { lambda: f64, threshold: f64, window: f64 },

    #[error("block {block} is not Hermitian at x = {x} (defect {defect:.3e})")]
    NonHermitian { block: String, x: f64, defect: f64 },

    #[error("ellipticity violated: I + A_eff not positive definite at x = {x} (min eigenvalue {min_eig:.3e})")]
    Ellipticity { x: f64, min_eig: f64 },

    #[error("tail region holds {found} samples, at least {required} are needed")]
    TooFewTailSamples { found: usize, required: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("singular pivot block at node {node} in linear solve")]
    SolverBreakdown { node: usize },

    #[error("stiffness breakdown in channel march at x = {x}")]
    Stiffness { x: f64 },

    #[error("coupling norm {norm:.3e} at the matching radius {x_match} exceeds {tol:.1e}")]
    MatchRadius { x_match: f64, norm: f64, tol: f64 },

    #[error("samples straddle threshold {threshold}")]
    StraddlesThreshold { threshold: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("time horizon too short: integrand at the horizon is {ratio:.3e} of its peak")]
    Horizon { ratio: f64 },

    #[error("scenario not admissible: {0}")]
    NotAdmissible(String),

    #[error("reconstruction residual {residual:.3e} exceeds {tol:.1e}: fiber family undersampled")]
    Undersampled { residual: f64, tol: f64 },

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { path: path.into(), msg: msg.into() }
    }
}
