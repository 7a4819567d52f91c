use thiserror::Error;

use crate::mdp::StateId;

pub type Result<T, E = OpsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum OpsError {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("policy undefined at reachable state (h={}, s={})", .0.layer, .0.index)]
    UndefinedPolicy(StateId),

    #[error("distribution at layer {layer} sums to {sum}, expected 1")]
    NotNormalized { layer: usize, sum: f64 },

    #[error(
        "support violation: target puts mass on action {action} at (h={}, s={}) but the recorded behavior probability is 0",
        .state.layer, .state.index
    )]
    SupportViolation { state: StateId, action: usize },

    #[error("no transitions recorded for layers {0:?}")]
    MissingLayers(Vec<usize>),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("unknown method `{name}`; valid methods: {valid}")]
    UnknownMethod { name: String, valid: String },

    #[error("oracle returned candidate {0}, expected 0 or 1")]
    OracleIndex(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl OpsError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        OpsError::InvalidArgument(msg.into())
    }

    /// Process exit code: 2 for configuration, 3 for input data, 4 for
    /// numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            OpsError::Config(_) | OpsError::InvalidArgument(_) | OpsError::UnknownMethod { .. } => 2,
            OpsError::Numeric(_) => 4,
            _ => 3,
        }
    }
}
