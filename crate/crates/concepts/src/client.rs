//! Chat-completion client with an offline fixture store.
//!
//! Fixture files live at `<fixture_dir>/<sha256-of-prompt>.txt` and hold the raw response text.
//! When a fixture directory is configured the client never touches the network.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LLMConfig {
    /// Chat-completion URL. Required unless `fixture_dir` is set.
    pub endpoint: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the bearer token. The key itself is never
    /// stored in a config.
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
    pub fixture_dir: Option<PathBuf>,
}

impl Default for LLMConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: "gpt-4".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            timeout_secs: 60.0,
            fixture_dir: None,
        }
    }
}

impl LLMConfig {
    pub fn offline(fixture_dir: impl Into<PathBuf>) -> Self {
        Self {
            fixture_dir: Some(fixture_dir.into()),
            ..Self::default()
        }
    }

    pub fn live(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: Some(endpoint.into()),
            ..Self::default()
        }
    }

    pub fn is_offline(&self) -> bool {
        self.fixture_dir.is_some()
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "timeout must be positive, got {}",
                self.timeout_secs
            )));
        }
        if self.model.trim().is_empty() {
            return Err(Error::InvalidConfig("empty model identifier".into()));
        }
        if self.is_offline() {
            return Ok(());
        }
        let Some(endpoint) = &self.endpoint else {
            return Err(Error::InvalidConfig("endpoint required without a fixture directory".into()));
        };
        let url = url::Url::parse(endpoint)
            .map_err(|e| Error::InvalidConfig(format!("invalid endpoint {endpoint:?}: {e}")))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(Error::InvalidConfig(format!("unsupported scheme {:?}", url.scheme())));
        }
        Ok(())
    }
}

/// Lowercase hex SHA-256 of the UTF-8 bytes.
pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn fixture_path(dir: &Path, prompt: &str) -> PathBuf {
    dir.join(format!("{}.txt", sha256_hex(prompt)))
}

/// Stores a response so later offline runs replay it.
pub fn record_fixture(dir: &Path, prompt: &str, response: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = fixture_path(dir, prompt);
    fs::write(&path, response).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: AssistantMessage,
}

#[derive(Deserialize)]
struct AssistantMessage {
    content: String,
}

/// Sends `prompt` as a single user turn and returns the assistant text, or replays the
/// stored fixture in offline mode.
pub fn query_llm(prompt: &str, config: &LLMConfig) -> Result<String> {
    config.validate()?;
    let prompt_hash = sha256_hex(prompt);
    if let Some(dir) = &config.fixture_dir {
        let path = fixture_path(dir, prompt);
        return match fs::read_to_string(&path) {
            Ok(text) => Ok(text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(Error::FixtureMiss { prompt_hash, path })
            }
            Err(source) => Err(Error::Io { path, source }),
        };
    }

    let endpoint = config.endpoint.as_deref().expect("validated endpoint");
    let token = match &config.api_key_env {
        Some(var) => Some(std::env::var(var).map_err(|_| Error::MissingApiKey(var.clone()))?),
        None => None,
    };
    let body = serde_json::to_vec(&ChatRequest {
        model: &config.model,
        messages: [ChatMessage {
            role: "user",
            content: prompt,
        }],
    })?;
    let transport = |source: reqwest::Error| {
        if source.is_timeout() {
            Error::Timeout {
                prompt_hash: prompt_hash.clone(),
                source,
            }
        } else {
            Error::Transport {
                prompt_hash: prompt_hash.clone(),
                source,
            }
        }
    };
    let client = reqwest::blocking::Client::builder()
        .timeout(config.timeout())
        .build()
        .map_err(transport)?;
    let mut request = client
        .post(endpoint)
        .header(reqwest::header::CONTENT_TYPE, "application/json")
        .body(body);
    if let Some(token) = token {
        request = request.bearer_auth(token);
    }
    log::debug!("querying {endpoint} for prompt {prompt_hash}");
    let response = request.send().map_err(transport)?;
    let status = response.status();
    if !status.is_success() {
        return Err(Error::Http {
            status: status.as_u16(),
            retryable: status.as_u16() == 429 || status.is_server_error(),
            prompt_hash,
        });
    }
    let bytes = response.bytes().map_err(transport)?;
    let parsed: ChatResponse = serde_json::from_slice(&bytes).map_err(|e| Error::MalformedResponse {
        prompt_hash: prompt_hash.clone(),
        reason: e.to_string(),
    })?;
    parsed
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or(Error::MalformedResponse {
            prompt_hash,
            reason: "no choices".into(),
        })
}
