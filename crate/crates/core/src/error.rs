use thiserror::Error;

/// Errors produced by the lab.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid filtered space: {0}")]
    InvalidSpace(String),

    #[error("index out of range: {what} = {index}, limit {limit}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("process shape mismatch: {0}")]
    Shape(String),

    #[error("process is not {kind}: step {step}, outcome {outcome}")]
    NotMeasurable {
        kind: &'static str,
        step: usize,
        outcome: usize,
    },

    #[error("stopping-time count {count} exceeds limit {limit}")]
    CountExceeded { count: u128, limit: u128 },

    #[error("invalid stopping time: {0}")]
    InvalidStoppingTime(String),

    #[error("not a supermartingale: drift {excess:e} at step {step}, atom {atom}")]
    NotSupermartingale { step: usize, atom: usize, excess: f64 },

    #[error("not a martingale: conditional mean {drift:e} at step {step}, atom {atom}")]
    NotMartingale { step: usize, atom: usize, drift: f64 },

    #[error("step size too large: dt * mu = {product} > 0.5 at step {step}")]
    StepSizeTooLarge { step: usize, product: f64 },

    #[error("root bracket failure at step {step}, atom {atom}: generator is not monotone as declared")]
    RootBracketFailure { step: usize, atom: usize },

    #[error("barrier crossing: lower {lower} > upper {upper} at step {step}, outcome {outcome}")]
    BarrierCrossing {
        step: usize,
        outcome: usize,
        lower: f64,
        upper: f64,
    },

    #[error("Picard iteration did not converge within {max_iter} iterations (window {window})")]
    NoConvergence { max_iter: usize, window: usize },

    #[error("hypothesis not verified: {0}")]
    HypothesisUnverified(String),

    #[error("generator `{name}` violates its declared {constant}: {detail}")]
    GeneratorDeclaration {
        name: String,
        constant: &'static str,
        detail: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config {
            key: "<json>".into(),
            message: e.to_string(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
