use thiserror::Error;

use crate::expr::ExprError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the laboratory can report. Messages lead with the module
/// that raised them and, where it applies, the grid node or path.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("core: invalid constants: {0}")]
    InvalidConstants(String),

    #[error("core: standing assumptions not satisfied ({0}); set override_gate to run anyway")]
    AssumptionGate(String),

    #[error("core: invalid problem: {0}")]
    InvalidProblem(String),

    #[error("algebra: non-contractive at {location}: L3*|p| = {factor:.6} >= 1")]
    NonContractive { location: String, factor: f64 },

    #[error("algebra: tolerance {tol:e} not reached in {max_iter} iterations (last gap {gap:e})")]
    MaxIterations { tol: f64, max_iter: usize, gap: f64 },

    #[error("paths: coefficient depends on {0} but no feed was provided")]
    MissingFeed(&'static str),

    #[error("paths: singular regression at step {step}: condition number {condition:e} > 1e12")]
    SingularRegression { step: usize, condition: f64 },

    #[error("{module}: CFL violation: {detail}")]
    CflViolation { module: &'static str, detail: String },

    #[error("fbsde: Picard iteration diverged, gap history {history:?}")]
    PicardDiverged { history: Vec<f64> },

    #[error("fbsde: Picard tolerance {tol:e} not reached in {max} iterations, gap history {history:?}")]
    MaxPicard { tol: f64, max: usize, history: Vec<f64> },

    #[error("value: path left the spatial box at step {step}, path {path}")]
    InterpolationOutOfBounds { step: usize, path: usize },

    #[error("{module}: non-finite value at {location}")]
    NonFinite { module: &'static str, location: String },

    #[error("verify: candidate Lipschitz constant {lip:.4} exceeds bound {bound:.4}")]
    NotLipschitz { lip: f64, bound: f64 },

    #[error("verify: ||D W||_inf * L3 = {factor:.4} >= 1")]
    GradientTooLarge { factor: f64 },

    #[error("verify: grid spacing {spacing:e} too coarse for epsilon {epsilon:e} (need spacing <= epsilon/4)")]
    Resolution { spacing: f64, epsilon: f64 },

    #[error("verify: precondition failed: {0}")]
    Precondition(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("config: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::AssumptionGate(_) => 2,
            Error::Config(_) | Error::Json(_) | Error::Io(_) | Error::InvalidProblem(_) => 4,
            Error::Expr(e) if e.is_parse_error() => 4,
            _ => 3,
        }
    }
}
