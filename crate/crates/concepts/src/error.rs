use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("HTTP error {status} for prompt {prompt_hash}{}", if *.retryable { " (retryable)" } else { "" })]
    Http {
        status: u16,
        retryable: bool,
        prompt_hash: String,
    },
    #[error("request timed out for prompt {prompt_hash}")]
    Timeout {
        prompt_hash: String,
        #[source]
        source: reqwest::Error,
    },
    #[error("transport error for prompt {prompt_hash}: {source}")]
    Transport {
        prompt_hash: String,
        #[source]
        source: reqwest::Error,
    },
    #[error("malformed response for prompt {prompt_hash}: {reason}")]
    MalformedResponse { prompt_hash: String, reason: String },
    #[error("fixture miss for prompt {prompt_hash}: {} not found", path.display())]
    FixtureMiss { prompt_hash: String, path: PathBuf },
    #[error("count mismatch: {descriptors} descriptors but {rows} embedding rows")]
    CountMismatch { descriptors: usize, rows: usize },
    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] cbm_core::Error),
}

impl Error {
    /// True for rate limiting, server errors and timeouts.
    pub fn is_retryable(&self) -> bool {
        match self {
            Error::Http { retryable, .. } => *retryable,
            Error::Timeout { .. } => true,
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
