//! HTTP backend for hosted language models.
//!
//! One POST per prompt. The request body is JSON:
//!
//! ```json
//! {"model": "...", "prompt": "...", "temperature": 0.0, "top_p": 0.95, "max_tokens": 2048, "seed": 7}
//! ```
//!
//! and the reply must be JSON with a `completion` string. A bearer token is
//! taken from the environment variable named by [`API_KEY_ENV`] when set.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::backend::{Backend, BackendError, Query};

pub const API_KEY_ENV: &str = "GRADEALIGN_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_top_p() -> f64 {
    0.95
}

fn default_max_tokens() -> u32 {
    2048
}

fn default_timeout() -> u64 {
    120
}

fn default_in_flight() -> usize {
    4
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            model: String::new(),
            temperature: 0.0,
            top_p: default_top_p(),
            max_tokens: default_max_tokens(),
            timeout_secs: default_timeout(),
            max_in_flight: default_in_flight(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteRequest<'a> {
    pub model: &'a str,
    pub prompt: &'a str,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteResponse {
    pub completion: String,
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("config", &self.config)
            .field("api_key", &self.api_key.as_ref().map(|_| "<set>"))
            .finish()
    }
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(config: RemoteConfig, api_key: Option<String>) -> Result<Self, BackendError> {
        if !config.endpoint.starts_with("http://") && !config.endpoint.starts_with("https://") {
            return Err(BackendError::Config(format!(
                "endpoint must be an http(s) URL, got `{}`",
                config.endpoint
            )));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteBackend {
            config,
            agent,
            api_key,
        })
    }
}

impl Backend for RemoteBackend {
    fn name(&self) -> String {
        if self.config.model.is_empty() {
            format!("remote:{}", self.config.endpoint)
        } else {
            format!("remote:{}", self.config.model)
        }
    }

    fn complete(&self, query: &Query<'_>) -> Result<String, BackendError> {
        let body = RemoteRequest {
            model: &self.config.model,
            prompt: query.prompt,
            temperature: self.config.temperature,
            top_p: self.config.top_p,
            max_tokens: self.config.max_tokens,
            seed: query.seed,
        };
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Status { status, body });
        }
        let parsed: RemoteResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        Ok(parsed.completion)
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight.max(1)
    }
}
