use thiserror::Error;

/// Errors produced by the analysis, simulation and control routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// `|Re(eta L)|` exceeded the double-precision exponential range.
    #[error("overflow: |Re(eta L)| = {0:.3e} exceeds the exponential range")]
    Overflow(f64),

    #[error("sigma = {re}{im:+}i is too close to the branch cut of Q(sigma)")]
    BranchPrecondition { re: f64, im: f64 },

    #[error("|F| = {modulus:.3e} on the contour at beta = {beta:.6} is below the floor")]
    MarginalDegenerate { beta: f64, modulus: f64 },

    #[error("contour radius doubled {0} times without a stable winding count")]
    RadiusExhausted(usize),

    #[error("Newton iteration did not converge (last residual {0:.3e})")]
    NoConvergence(f64),

    #[error("derivative vanished during Newton iteration")]
    DerivativeVanishes,

    #[error("step matrix is singular (zero pivot at row {0})")]
    SingularStepMatrix(usize),

    #[error("state left the double range at step {0}")]
    NonFiniteState(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("kernel iteration did not converge (last update {0:.3e})")]
    NoKernelConvergence(f64),

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Short variant name, used by the CLI when reporting numerical failures.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidParams(_) => "InvalidParams",
            Error::Precondition(_) => "Precondition",
            Error::Overflow(_) => "Overflow",
            Error::BranchPrecondition { .. } => "BranchPrecondition",
            Error::MarginalDegenerate { .. } => "MarginalDegenerate",
            Error::RadiusExhausted(_) => "RadiusExhausted",
            Error::NoConvergence(_) => "NoConvergence",
            Error::DerivativeVanishes => "DerivativeVanishes",
            Error::SingularStepMatrix(_) => "SingularStepMatrix",
            Error::NonFiniteState(_) => "NonFiniteState",
            Error::InsufficientData(_) => "InsufficientData",
            Error::NoKernelConvergence(_) => "NoKernelConvergence",
            Error::MeshMismatch(_) => "MeshMismatch",
            Error::Io(_) => "Io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
