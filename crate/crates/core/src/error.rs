use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("assumption {assumption} violated: {detail}")]
    AssumptionViolated { assumption: String, detail: String },

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("regression failed at layer {layer}: feature `{feature}` is degenerate")]
    Regression { layer: usize, feature: String },

    #[error("picard iteration did not converge (residual {residual:e} after {iterations} iterations)")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("at layer {layer}: {source}")]
    AtLayer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("at penalty level k = {k}: {source}")]
    AtPenalty {
        k: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported engine: {0}")]
    UnsupportedEngine(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn at_layer(self, layer: usize) -> Self {
        Error::AtLayer { layer, source: Box::new(self) }
    }

    pub(crate) fn at_penalty(self, k: f64) -> Self {
        Error::AtPenalty { k, source: Box::new(self) }
    }

    /// Innermost error, with layer/penalty context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLayer { source, .. } | Error::AtPenalty { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for numerical failures (non-convergence, exhausted budgets).
    pub fn is_numerical(&self) -> bool {
        matches!(self.root(), Error::NonConvergence { .. } | Error::Resource(_) | Error::Regression { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
