use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("cutoff insufficient: {0}")]
    Cutoff(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("resource limit: {what} needs {required}, limit is {limit}")]
    Resource {
        what: String,
        required: usize,
        limit: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
