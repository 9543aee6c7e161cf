use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("energy causality violated: sensor sent an update with an empty battery")]
    EnergyCausality,

    #[error(
        "joint state space has {states} states, above the cap of {cap}; \
         use the relaxed solver (solve-relaxed) for instances of this size"
    )]
    StateSpaceTooLarge { states: u128, cap: u128 },

    #[error("too many sensors for action enumeration: {sensors} (cap {cap})")]
    TooManySensors { sensors: usize, cap: usize },

    #[error("relative value iteration did not converge after {iterations} iterations (last span {span:e})")]
    NotConverged { iterations: usize, span: f64 },

    #[error("policy-induced chain has {classes} recurrent classes; expected a single one")]
    Multichain { classes: usize },

    #[error("stationary solve failed: {0}")]
    Stationary(String),

    #[error("bisection failure: {0}")]
    Bisection(String),

    #[error("missing policy file {}; run {command} first", path.display())]
    MissingPolicy { path: std::path::PathBuf, command: &'static str },

    #[error("empty sample stream")]
    EmptyStream,

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
