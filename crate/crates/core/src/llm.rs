//! Chat-completion endpoints.
//!
//! [`HttpChatEndpoint`] speaks the OpenAI-compatible `/chat/completions`
//! shape; [`FnEndpoint`] adapts a closure, for replay and tests.

use std::fmt;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("endpoint {endpoint} unreachable: {message}")]
    Unreachable { endpoint: String, message: String },
    #[error("endpoint {endpoint} returned HTTP {status}: {body}")]
    Status {
        endpoint: String,
        status: u16,
        body: String,
    },
    #[error("endpoint {endpoint} sent a malformed response: {message}")]
    Malformed { endpoint: String, message: String },
    #[error("missing API key: environment variable {0} is not set")]
    MissingKey(String),
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            Self::Unreachable { .. } => true,
            Self::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// A chat model. Implementations hold no conversation state between calls.
pub trait ChatEndpoint: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, TransportError>;
    fn id(&self) -> &str;
}

impl fmt::Debug for dyn ChatEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChatEndpoint({})", self.id())
    }
}

pub struct FnEndpoint<F> {
    id: String,
    f: F,
}

impl<F> FnEndpoint<F>
where
    F: Fn(&[ChatMessage]) -> Result<String, TransportError> + Send + Sync,
{
    pub fn new(id: impl Into<String>, f: F) -> Self {
        Self { id: id.into(), f }
    }
}

impl<F> ChatEndpoint for FnEndpoint<F>
where
    F: Fn(&[ChatMessage]) -> Result<String, TransportError> + Send + Sync,
{
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, TransportError> {
        (self.f)(messages)
    }

    fn id(&self) -> &str {
        &self.id
    }
}

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_temperature() -> f64 {
    0.7
}
fn default_max_tokens() -> u32 {
    4096
}
fn default_timeout_s() -> u64 {
    120
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}

/// Endpoint descriptor as it appears in configuration files. The key itself
/// is read from the named environment variable, never from the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    #[serde(default)]
    pub id: Option<String>,
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            id: None,
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: default_api_key_env(),
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            timeout_s: default_timeout_s(),
            max_retries: default_max_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

pub struct HttpChatEndpoint {
    id: String,
    url: String,
    config: EndpointConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatEndpoint {
    /// Resolves the API key from the environment. A missing variable is an
    /// error unless the base URL is a loopback address.
    pub fn from_config(config: EndpointConfig) -> Result<Self, TransportError> {
        let api_key = std::env::var(&config.api_key_env).ok();
        let local = ["http://127.0.0.1", "http://localhost", "http://[::1]"]
            .iter()
            .any(|p| config.base_url.starts_with(p));
        if api_key.is_none() && !local {
            return Err(TransportError::MissingKey(config.api_key_env.clone()));
        }
        Ok(Self::with_key(config, api_key))
    }

    pub fn with_key(config: EndpointConfig, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        let url = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
        let id = config.id.clone().unwrap_or_else(|| config.model.clone());
        Self {
            id,
            url,
            config,
            api_key,
            agent,
        }
    }

    fn attempt(&self, body: &str) -> Result<String, TransportError> {
        let mut req = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| TransportError::Unreachable {
            endpoint: self.id.clone(),
            message: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Unreachable {
                endpoint: self.id.clone(),
                message: e.to_string(),
            })?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Status {
                endpoint: self.id.clone(),
                status,
                body: text.chars().take(500).collect(),
            });
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| TransportError::Malformed {
            endpoint: self.id.clone(),
            message: e.to_string(),
        })?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| TransportError::Malformed {
                endpoint: self.id.clone(),
                message: "no choices[0].message.content".into(),
            })
    }
}

impl ChatEndpoint for HttpChatEndpoint {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, TransportError> {
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        })
        .to_string();
        let mut delay = self.config.backoff_ms;
        let mut tries = 0;
        loop {
            match self.attempt(&body) {
                Err(e) if e.retryable() && tries < self.config.max_retries => {
                    tracing::warn!(endpoint = %self.id, error = %e, "retrying chat request");
                    thread::sleep(Duration::from_millis(delay));
                    delay = delay.saturating_mul(2);
                    tries += 1;
                }
                other => return other,
            }
        }
    }

    fn id(&self) -> &str {
        &self.id
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves one canned HTTP response per entry, in order.
    fn serve(responses: Vec<(u16, String)>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        format!("http://{addr}/v1")
    }

    fn config(url: String) -> EndpointConfig {
        EndpointConfig {
            backoff_ms: 1,
            ..EndpointConfig::new(url, "test-model")
        }
    }

    #[test]
    fn extracts_first_choice() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}]}"#;
        let url = serve(vec![(200, body.into())]);
        let ep = HttpChatEndpoint::with_key(config(url), None);
        assert_eq!(ep.complete(&[ChatMessage::user("x")]).unwrap(), "hi");
        assert_eq!(ep.id(), "test-model");
    }

    #[test]
    fn retries_server_errors() {
        let ok = r#"{"choices":[{"message":{"content":"done"}}]}"#;
        let url = serve(vec![(503, "{}".into()), (429, "{}".into()), (200, ok.into())]);
        let ep = HttpChatEndpoint::with_key(config(url), Some("k".into()));
        assert_eq!(ep.complete(&[ChatMessage::user("x")]).unwrap(), "done");
    }

    #[test]
    fn client_errors_are_not_retried() {
        let url = serve(vec![(400, r#"{"error":"bad"}"#.into())]);
        let ep = HttpChatEndpoint::with_key(config(url), None);
        let err = ep.complete(&[ChatMessage::user("x")]).unwrap_err();
        assert!(matches!(err, TransportError::Status { status: 400, .. }));
    }

    #[test]
    fn malformed_payload() {
        let url = serve(vec![(200, r#"{"choices":[]}"#.into())]);
        let ep = HttpChatEndpoint::with_key(config(url), None);
        assert!(matches!(
            ep.complete(&[]),
            Err(TransportError::Malformed { .. })
        ));
    }

    #[test]
    fn unreachable_endpoint() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let cfg = EndpointConfig {
            max_retries: 0,
            ..config(format!("http://{addr}"))
        };
        let ep = HttpChatEndpoint::with_key(cfg, None);
        assert!(matches!(ep.complete(&[]), Err(TransportError::Unreachable { .. })));
    }

    #[test]
    fn remote_endpoint_requires_key() {
        let cfg = EndpointConfig {
            api_key_env: "OBFUBENCH_TEST_UNSET_KEY".into(),
            ..EndpointConfig::new("https://api.example.invalid/v1", "m")
        };
        assert!(matches!(
            HttpChatEndpoint::from_config(cfg),
            Err(TransportError::MissingKey(_))
        ));
    }
}
