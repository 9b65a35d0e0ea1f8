use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: claim id `{claim_id}` does not resolve to a loaded claim")]
    DanglingClaimId {
        path: PathBuf,
        line: usize,
        claim_id: String,
    },

    #[error("claim `{0}` has no QA pairs to select from")]
    EmptyQaSet(String),

    #[error("QA service unreachable after {attempts} attempt(s): {reason}")]
    ServiceUnreachable { attempts: u32, reason: String },

    #[error("malformed QA service response: {0}")]
    MalformedResponse(String),

    #[error("embedding store has no vector for key `{0}`")]
    MissingKey(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("cannot score a claim with no pair scores")]
    EmptyScores,

    #[error("development set is empty")]
    EmptyDevSet,

    #[error("training split is empty")]
    EmptyTrainSplit,

    #[error("length mismatch: {0} predictions vs {1} gold labels")]
    LengthMismatch(usize, usize),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("variant {0} produces no attention weights")]
    VariantWithoutWeights(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("archive encoding: {0}")]
    Archive(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::DimMismatch {
            context: context.into(),
            expected,
            actual,
        }
    }

    /// True for failures caused by the filesystem or an external service,
    /// as opposed to malformed or inconsistent input data.
    pub fn is_io_or_service(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::ServiceUnreachable { .. } | Error::MalformedResponse(_)
        )
    }
}
