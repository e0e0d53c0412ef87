use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("offset range error at line {line}: fragment {start}..{end} outside text of {len} characters")]
    Range {
        line: usize,
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("fragment boundary at line {line} splits token {token_index} {token:?} ({token_start}..{token_end})")]
    Boundary {
        line: usize,
        token_index: usize,
        token: String,
        token_start: usize,
        token_end: usize,
    },

    #[error("invalid span or entity: {0}")]
    InvalidEntity(String),

    #[error("encode conflict at cell ({tail}, {head}): {first} vs {second}")]
    EncodeConflict {
        tail: usize,
        head: usize,
        first: String,
        second: String,
    },

    #[error("decode degenerate: THW cell ({tail}, {head}) yields more than {cap} paths")]
    DecodeDegenerate { tail: usize, head: usize, cap: usize },

    #[error("document alignment error: {0}")]
    Alignment(String),

    #[error("sample consistency error: {0}")]
    Consistency(String),

    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("gold tag id {tag} out of range for {num_tags} tags")]
    TagOutOfRange { tag: usize, num_tags: usize },

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
