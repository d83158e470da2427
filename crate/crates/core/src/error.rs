use thiserror::Error;

pub type Result<T, E = AncError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AncError {
    #[error("degenerate signal: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("signal mismatch: {0}")]
    Mismatch(String),

    /// An adaptive filter left its stable region. `step` is the sample index
    /// at which the condition was detected.
    #[error("{context}: adaptive filter diverged at step {step} ({reason})")]
    Divergence {
        context: String,
        step: u64,
        reason: String,
    },

    #[error("unnulled DC at sensor: running mean {mean:.3} exceeds threshold {threshold:.3}")]
    UnnulledDc { mean: f64, threshold: f64 },

    #[error(
        "DC pre-null did not settle within {timeout_s} s (final means {final_mean_nt:?} nT, actuator saturated: {saturated})"
    )]
    PrenullTimeout {
        timeout_s: f64,
        final_mean_nt: [f64; 3],
        saturated: bool,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("missing stage data: {0}")]
    MissingStage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AncError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        AncError::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        AncError::Config(msg.into())
    }

    /// Attach a context label (axis, phase) to a divergence error.
    pub fn with_context(self, ctx: &str) -> Self {
        match self {
            AncError::Divergence {
                context,
                step,
                reason,
            } => AncError::Divergence {
                context: if context.is_empty() {
                    ctx.to_string()
                } else {
                    format!("{ctx}: {context}")
                },
                step,
                reason,
            },
            other => other,
        }
    }
}
