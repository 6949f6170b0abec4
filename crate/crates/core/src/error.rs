use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: wrong dimension, non-positive parameter, length mismatch.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A point that must lie in the support does not.
    #[error("point {point:?} is outside the support of target `{target}`")]
    Domain { target: String, point: Vec<f64> },

    /// A rejection loop hit its attempt cap.
    #[error("rejection sampler for `{target}` exceeded {attempts} attempts{}", level_suffix(.level))]
    Efficiency {
        target: String,
        attempts: u64,
        level: Option<f64>,
    },

    /// A proposal had density above the declared upper bound.
    #[error("target `{target}` has rho = {observed} above its declared bound {bound}")]
    BoundViolation {
        target: String,
        observed: f64,
        bound: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A built matrix or representation violates its structural invariants.
    #[error("construction error: {0}")]
    Construction(String),

    #[error("step {index} failed: {source}")]
    Step {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

fn level_suffix(level: &Option<f64>) -> String {
    match level {
        Some(t) => format!(" at level t = {t}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
