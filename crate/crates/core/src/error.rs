use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GerneError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GerneError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("group (y={class}, a={attribute}) would be empty")]
    EmptyGroup { class: usize, attribute: usize },

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("attributes are hidden and no pseudo-grouping is attached")]
    HiddenAttributes,

    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("{path}, line {line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("beta = {beta} is infeasible: p_ext(a={attribute}|y={class}) = {value} lies outside [0, 1]")]
    InfeasibleBeta {
        beta: f64,
        class: usize,
        attribute: usize,
        value: f64,
    },

    #[error("degenerate target: {0}")]
    Degenerate(String),

    #[error("loss became non-finite at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("non-finite loss")]
    NonFiniteLoss,

    #[error("group too small to stratify: (y={class}, a={attribute}) has {size} samples")]
    GroupTooSmall {
        class: usize,
        attribute: usize,
        size: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GerneError {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            GerneError::InfeasibleBeta { .. }
            | GerneError::InvalidConfig(_)
            | GerneError::InvalidSpec(_)
            | GerneError::EmptyGroup { .. }
            | GerneError::GroupTooSmall { .. } => 2,
            GerneError::Divergence { .. } | GerneError::NonFiniteLoss => 3,
            _ => 1,
        }
    }
}
