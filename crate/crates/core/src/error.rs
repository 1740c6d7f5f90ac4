use thiserror::Error;

/// Errors raised by the library.
///
/// Variants split into two families: input validation (bad user data or
/// configuration) and invariant violations (something the library itself
/// guarantees turned out false). The CLI maps them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("state {state} out of range (dfa has {num_states} states)")]
    StateOutOfRange { state: usize, num_states: usize },

    #[error("symbol {symbol} out of range (alphabet has {alphabet_size} symbols)")]
    SymbolOutOfRange { symbol: usize, alphabet_size: usize },

    #[error("alphabet mismatch: {left} vs {right}")]
    AlphabetMismatch { left: usize, right: usize },

    #[error("sampler exhausted after {attempts} attempts")]
    SamplerExhausted { attempts: usize },

    #[error("zero-norm embedding for state {0}")]
    ZeroEmbedding(usize),

    #[error("training diverged at epoch {epoch}: value loss {loss} vs initial {initial}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },

    #[error("embedding key collision between non-bisimilar dfa states {a} and {b}")]
    EmbeddingCollision { a: usize, b: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the caller's input rather than a library bug.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Invariant(_) | Error::EmbeddingCollision { .. } | Error::Diverged { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
