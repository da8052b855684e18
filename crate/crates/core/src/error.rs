use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("invalid operation: {0}")]
    InvalidOperation(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("not enough correctly predicted samples in group {group}: wanted {wanted}, have {available}")]
    Shortage {
        group: String,
        wanted: usize,
        available: usize,
    },

    #[error("per-epoch scores were not retained for this matrix")]
    PerEpochUnavailable,

    #[error("degenerate removal: {0}")]
    DegenerateRemoval(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: alloc::boxed::Box::new(self),
        }
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Config(_) => "config",
            Error::Integrity(_) => "integrity",
            Error::Lookup(_) => "lookup",
            Error::InvalidOperation(_) => "invalid_operation",
            Error::Unsupported(_) => "unsupported",
            Error::Divergence { .. } => "divergence",
            Error::Numeric(_) => "numeric",
            Error::Shortage { .. } => "shortage",
            Error::PerEpochUnavailable => "per_epoch_unavailable",
            Error::DegenerateRemoval(_) => "degenerate_removal",
            Error::Context { source, .. } => source.kind(),
        }
    }
}
