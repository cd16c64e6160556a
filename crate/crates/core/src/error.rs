use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index ({h}, {w}) out of range for {height}x{width} grid")]
    OutOfBounds {
        h: usize,
        w: usize,
        height: usize,
        width: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("not a flo file")]
    NotFlo,
    #[error("corrupt flow: {0}")]
    CorruptFlow(String),
    #[error("corrupt feature map: {0}")]
    CorruptFeatureMap(String),
    #[error("malformed image {0}")]
    Image(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("training diverged at iteration {iter}: non-finite loss")]
    Diverged { iter: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
