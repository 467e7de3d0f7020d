use echosyn_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed (inputs {inputs_hash}): {source}\n  fix the cause and rerun with --resume to continue from this stage")]
    Stage {
        stage: &'static str,
        inputs_hash: String,
        #[source]
        source: Box<PipelineError>,
    },

    #[error("missing artifact for stage `{stage}`: {detail}")]
    MissingArtifact { stage: &'static str, detail: String },

    #[error("artifact hash mismatch: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{0}")]
    Other(String),
}

impl PipelineError {
    /// Process exit status: 2 config, 3 stage failure, 4 hash mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Mismatch(_) => 4,
            PipelineError::Stage { source, .. } => match source.exit_code() {
                2 | 4 => source.exit_code(),
                _ => 3,
            },
            _ => 3,
        }
    }
}

impl From<echosyn_nn::NnError> for PipelineError {
    fn from(e: echosyn_nn::NnError) -> Self {
        PipelineError::Core(e.into())
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
