use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("unknown characteristic `{0}`")]
    UnknownCharacteristic(String),

    #[error("unknown service code(s): {}", .0.join(", "))]
    UnknownServices(Vec<String>),

    #[error("invalid care plan: {0}")]
    InvalidPlan(String),

    #[error("unknown patient `{0}`")]
    UnknownPatient(String),

    #[error("failed to parse {what} at line {line}, column {column}: {message}")]
    Parse {
        what: &'static str,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("labels contain a single class; logistic fit is undefined")]
    SingleClass,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("coefficient {0} is not estimable (separation or aliasing)")]
    NotEstimable(usize),

    #[error("propensity for service `{0}` is not finite")]
    NonFinitePropensity(String),

    #[error("model integrity error: {0}")]
    ModelIntegrity(String),

    #[error("model member {index} is invalid: {message}")]
    InvalidMember { index: usize, message: String },

    #[error("model schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("empty ensemble: every predictor was pruned")]
    EmptyEnsemble,

    #[error(
        "dijkstra frontier exceeded {limit} vertices; shrink the catalog or the plan size, \
         or raise the frontier limit"
    )]
    FrontierOverflow { limit: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: &'static str, err: &serde_json::Error) -> Self {
        Error::Parse {
            what,
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
