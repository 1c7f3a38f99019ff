use alloc::string::String;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("action mask has no legal entry")]
    EmptyMask,
    #[error("team {team} agent {agent} chose illegal action {action}")]
    IllegalAction {
        team: usize,
        agent: usize,
        action: usize,
    },
    #[error("step called after the episode finished")]
    EpisodeDone,
    #[error("malformed parameter blob: {0}")]
    Blob(String),
    #[error("network spec mismatch: expected fingerprint {expected:#018x}, found {found:#018x}")]
    SpecMismatch { expected: u64, found: u64 },
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("opponent pool is empty")]
    EmptyPool,
    #[error("unknown match outcome `{0}`")]
    UnknownOutcome(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl Error {
    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
