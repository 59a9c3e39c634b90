use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("batch size {got} too small for {op} (need at least {need})")]
    BatchSize {
        op: &'static str,
        got: usize,
        need: usize,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("label {label} out of range for {n_classes} classes")]
    Index { label: usize, n_classes: usize },

    #[error("non-finite value in {context}")]
    NonFinite {
        context: String,
        /// Objective values recorded before the failure, when available.
        trace: Vec<f64>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Prefixes the message of string-carrying variants with `ctx`.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Usage(m) => Error::Usage(format!("{ctx}: {m}")),
            Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
            Error::Format(m) => Error::Format(format!("{ctx}: {m}")),
            Error::Transport(m) => Error::Transport(format!("{ctx}: {m}")),
            Error::Schema(m) => Error::Schema(format!("{ctx}: {m}")),
            Error::Aggregation(m) => Error::Aggregation(format!("{ctx}: {m}")),
            Error::Degenerate(m) => Error::Degenerate(format!("{ctx}: {m}")),
            Error::NonFinite { context, trace } => Error::NonFinite { context: format!("{ctx}: {context}"), trace },
            other => other,
        }
    }
}
