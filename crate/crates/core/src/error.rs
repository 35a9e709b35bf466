use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum StageError {
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("non-finite gradient in layer {layer}")]
    Divergence { layer: usize },

    #[error("training diverged at epoch {epoch}, stage {stage}: {message}")]
    Training {
        epoch: usize,
        stage: usize,
        message: String,
    },

    #[error("completion produced a non-finite value in row {row}")]
    Completion { row: usize },

    #[error("graph error: {0}")]
    Graph(String),

    #[error("stage {stage} has training samples of a single class")]
    DegenerateClass { stage: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl StageError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        StageError::Validation(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        StageError::Shape(msg.into())
    }

    /// Coarse category used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            StageError::Parse { .. }
            | StageError::Validation(_)
            | StageError::Shape(_)
            | StageError::Graph(_)
            | StageError::DegenerateClass { .. }
            | StageError::Json(_) => ErrorKind::Validation,
            StageError::Numeric(_)
            | StageError::Divergence { .. }
            | StageError::Training { .. }
            | StageError::Completion { .. } => ErrorKind::Divergence,
            StageError::Io(_) => ErrorKind::Io,
            StageError::Csv(e) => match e.kind() {
                csv::ErrorKind::Io(_) => ErrorKind::Io,
                _ => ErrorKind::Validation,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Divergence,
    Io,
}

pub type Result<T, E = StageError> = std::result::Result<T, E>;
