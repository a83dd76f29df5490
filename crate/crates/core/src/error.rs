use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LeastError>;

#[derive(Debug, Error)]
pub enum LeastError {
    #[error("unparseable document {page_id}: {reason}")]
    UnparseableDocument { page_id: String, reason: String },

    #[error("label for page {page} references missing xpath {xpath}")]
    DanglingXPath { page: String, xpath: String },

    #[error("label file references unknown page {0}")]
    UnknownPage(String),

    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),

    #[error("website {website} has {available} labeled pages, need at least {required}")]
    InsufficientLabeledPages {
        website: String,
        available: usize,
        required: usize,
    },

    #[error("website {website} has {available} unlabeled pages, need {required} held out")]
    InsufficientPages {
        website: String,
        available: usize,
        required: usize,
    },

    #[error("no validation entries for {0}")]
    NoValidationEntries(String),

    #[error("seed and target site sets overlap on {0:?}")]
    OverlappingSiteSets(Vec<String>),

    #[error("labeling function {function} is unsound for {attribute} on {website}: {violations} violating nodes")]
    UnsoundLabelingFunction {
        function: String,
        attribute: String,
        website: String,
        violations: usize,
    },

    #[error("node {0} already present in the augmented corpus")]
    DuplicateNode(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed {what} at {path}:{line}: {reason}")]
    Malformed {
        what: &'static str,
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LeastError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LeastError::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad user input rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, LeastError::Io { .. })
    }
}
