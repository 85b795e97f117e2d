use thiserror::Error;

/// Errors raised anywhere in the sampler.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown space group {0} (expected 1..=230)")]
    UnknownSpaceGroup(u32),
    #[error("unknown element `{0}`")]
    UnknownElement(String),
    #[error("state is terminal; no further actions")]
    TerminalState,
    #[error("action {0} is masked in the current state")]
    MaskedAction(String),
    #[error("the source state has no parents")]
    NoParents,
    #[error("lattice parameters have not been set")]
    UnsetLattice,
    #[error("no valid action in a non-terminal state (dead end)")]
    DeadEnd,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("state space too large: more than {0} terminal states")]
    TooLarge(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid reward input: {0}")]
    Reward(String),
    #[error("tensor file: {0}")]
    Format(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
