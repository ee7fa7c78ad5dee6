use bst_kernel::KernelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty sentence")]
    EmptySentence,

    #[error("numerical domain error for word `{word}`: {detail}")]
    NumericalDomain { word: String, detail: String },

    #[error("training failed at step {step}: {reason}")]
    TrainingFailure { step: usize, reason: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("duplicate judgment for task `{task}` by annotator `{annotator}`")]
    DuplicateJudgment { task: String, annotator: String },

    #[error("invalid judgment: {0}")]
    InvalidJudgment(String),

    #[error(transparent)]
    Kernel(#[from] KernelError),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Labels an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}
