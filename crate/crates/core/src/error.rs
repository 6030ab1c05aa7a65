use crate::nets::Activation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("activation `{0}` has no derivative; only tanh, square and identity networks can be differentiated")]
    NonSmooth(Activation),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("generator is not invertible: {0}")]
    NotInvertible(String),

    #[error("invalid value for `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("descent violated at step {step}: objective rose from {before:e} to {after:e}")]
    DescentViolation {
        step: usize,
        before: f64,
        after: f64,
    },

    #[error("plan too large: {what} = {value} exceeds the cap {cap}; {hint}")]
    PlanTooLarge {
        what: &'static str,
        value: f64,
        cap: u64,
        hint: String,
    },

    #[error("initialization precondition violated: {0}")]
    Initialization(String),

    #[error("numerical blow-up at step {step}: non-finite gradient at state {state:?}")]
    NumericalBlowup { step: usize, state: Vec<f64> },

    #[error("exact enumeration is capped at d = {cap}, got d = {d}")]
    EnumerationCap { d: usize, cap: usize },

    #[error("support mismatch: {0}")]
    Support(String),

    #[error("not enough samples: {0}")]
    InsufficientSamples(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code, used in CLI error reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonSmooth(_) => "non_smooth",
            Error::InvalidNetwork(_) => "invalid_network",
            Error::NotInvertible(_) => "not_invertible",
            Error::InvalidArgument { .. } => "invalid_argument",
            Error::DescentViolation { .. } => "descent_violation",
            Error::PlanTooLarge { .. } => "plan_too_large",
            Error::Initialization(_) => "initialization",
            Error::NumericalBlowup { .. } => "numerical_blowup",
            Error::EnumerationCap { .. } => "enumeration_cap",
            Error::Support(_) => "support",
            Error::InsufficientSamples(_) => "insufficient_samples",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
