use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, mapped onto process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("no token reaches the minimum count")]
    EmptyVocabulary,
    #[error("every document is empty after preprocessing")]
    AllDocumentsEmpty,
    #[error("corpus has no tokens")]
    EmptyCorpus,
    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("numerical collapse: {0}")]
    NumericalCollapse(String),
    #[error("reconstruction assigns zero mass to observed word {index}")]
    DegenerateReconstruction { index: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, diagnostics: String },
    #[error("leading singular value is zero")]
    DegenerateSvd,
    #[error("empty input")]
    EmptyInput,
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("series too short: need at least {needed}, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("series share no months")]
    NoOverlap,
    #[error("only {got} common months, need at least {needed}")]
    InsufficientOverlap { needed: usize, got: usize },
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("missing stage input {}", path.display())]
    MissingStageInput { path: PathBuf },
    #[error("output directory {} is locked by another run", path.display())]
    Locked { path: PathBuf },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse { context: context.into(), message: message.to_string() }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_) => ErrorClass::Usage,
            Error::NumericalCollapse(_)
            | Error::DegenerateReconstruction { .. }
            | Error::NonFiniteLoss { .. }
            | Error::DegenerateSvd
            | Error::ZeroVariance => ErrorClass::Numerical,
            Error::Stage { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}
