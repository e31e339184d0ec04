use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("state {state:?} is outside the domain of `{system}`: {reason}")]
    Domain {
        system: String,
        state: Vec<f64>,
        reason: String,
    },

    #[error("non-finite value while evaluating `{what}`")]
    NonFinite { what: String },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("infeasible setpoint: {0}")]
    Infeasible(String),

    #[error("operating point outside admissible regime: {0}")]
    Regime(String),

    #[error("rank deficient: {0}")]
    Rank(String),

    #[error("matrix `{name}` is not {property}")]
    Definiteness {
        name: String,
        property: &'static str,
    },

    #[error("evaluation failed at sample {sample:?}: {message}")]
    Evaluation { sample: Vec<f64>, message: String },

    #[error("sampler could only produce {produced} of {requested} admissible samples")]
    Sampling { produced: usize, requested: usize },

    #[error("system is not certified Krasovskii passive: {0}")]
    NotCertified(String),

    #[error("trajectory diverged at t = {t}: component {component} reached {value:e}")]
    Divergence {
        t: f64,
        component: usize,
        value: f64,
    },

    #[error("trajectory left the model domain at t = {t}: {message}")]
    DomainExit { t: f64, message: String },

    #[error("trajectory is missing the `{0}` channel")]
    MissingChannel(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}
