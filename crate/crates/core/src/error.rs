use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    /// A non-finite value appeared. `layer` is the 1-based layer index when the
    /// failure happened inside the network, `context` describes where.
    #[error("numeric error{}: {context}", layer.map(|l| format!(" in layer {l}")).unwrap_or_default())]
    Numeric { layer: Option<usize>, context: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn numeric(context: impl Into<String>) -> Self {
        Error::Numeric {
            layer: None,
            context: context.into(),
        }
    }

    /// Attach context (e.g. the epoch) to a numeric error, leave others alone.
    pub fn with_context(self, what: impl AsRef<str>) -> Self {
        match self {
            Error::Numeric { layer, context } => Error::Numeric {
                layer,
                context: format!("{}: {context}", what.as_ref()),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
