use thiserror::Error;

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("image is {got:?}, encoder expects {expected:?} (width, height, channels)")]
    ImageSize {
        got: (usize, usize, usize),
        expected: (usize, usize, usize),
    },
    #[error("LoRA rank {rank} must be smaller than min({rows}, {cols})")]
    LoraRank { rank: usize, rows: usize, cols: usize },
    #[error("sequence of {len} tokens exceeds the context of {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("full-reference mode needs reference visual tokens")]
    MissingReference,
    #[error("token `{0}` is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("no score digit found in the response")]
    NoScoreDigit,
    #[error("training diverged in stage {stage}, epoch {epoch}: loss {loss}")]
    Diverged { stage: u8, epoch: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] harmony_core::Error),
}
