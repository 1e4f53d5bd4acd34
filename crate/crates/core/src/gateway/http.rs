use std::time::Duration;

use ureq::Agent;

use super::wire::{validate_response, WireRequest};
use super::{ChatRequest, Completion, Transport, TransportError};

/// Chat-completions over HTTP(S). The API key is read from the environment
/// once and only ever placed in the Authorization header.
pub struct HttpTransport {
    agent: Agent,
    url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let base = base_url.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        HttpTransport {
            agent,
            url,
            api_key: api_key.filter(|k| !k.is_empty()),
        }
    }

    /// Key from `env_var`, if set. A missing variable is not an error here;
    /// the endpoint will answer 401 if it needs one.
    pub fn from_env(base_url: &str, env_var: Option<&str>, timeout: Duration) -> Self {
        let key = env_var.and_then(|v| std::env::var(v).ok());
        Self::new(base_url, key, timeout)
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<Completion, TransportError> {
        let body = WireRequest::from(request);
        let mut call = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Network(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        match status {
            200..=299 => validate_response(text.as_bytes()).map_err(TransportError::Malformed),
            401 | 403 => Err(TransportError::Auth {
                status,
                detail: truncate(&text),
            }),
            _ => Err(TransportError::Status {
                status,
                body: truncate(&text),
            }),
        }
    }
}

fn truncate(s: &str) -> String {
    const MAX: usize = 512;
    match s.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}
