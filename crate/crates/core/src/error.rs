use thiserror::Error;

/// Library-wide error type. Variants that originate from a specific input
/// line carry the 1-based line number so CLI users can find the offender.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grammar config: {0}")]
    GrammarConfig(String),

    #[error("grammar text, line {line}: {msg}")]
    GrammarText { line: usize, msg: String },

    #[error("corpus line {line}: {msg}")]
    Corpus { line: usize, msg: String },

    #[error("bracketed tree: {0}")]
    Brackets(String),

    #[error("tree is not valid under the grammar: {0}")]
    InvalidTree(String),

    #[error("span extraction: {0}")]
    Spans(String),

    #[error("recovery: {0}")]
    Recovery(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
