//! Chat-completion client with bounded concurrency and retry.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use url::Url;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Request body sent to a chat-completion endpoint. Sampling is always
/// disabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn user(model: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            temperature: 0.0,
            messages: vec![ChatMessage { role: "user".into(), content: content.into() }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EndpointError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited")]
    RateLimited,
    #[error("server error {status}: {body}")]
    Server { status: u16, body: String },
    #[error("request rejected with {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("retry budget exhausted after {attempts} attempts: {last}")]
    BudgetExhausted { attempts: u32, last: Box<EndpointError> },
    #[error("no recorded transcript for request {key}")]
    ReplayMiss { key: String },
}

impl EndpointError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EndpointError::Timeout | EndpointError::RateLimited | EndpointError::Server { .. } | EndpointError::Transport(_))
    }

    pub(crate) fn from_reqwest(e: reqwest::Error) -> Self {
        if e.is_timeout() {
            EndpointError::Timeout
        } else if e.is_decode() {
            EndpointError::MalformedResponse(e.to_string())
        } else {
            EndpointError::Transport(e.to_string())
        }
    }

    pub(crate) fn from_status(status: reqwest::StatusCode, body: String) -> Self {
        if status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            EndpointError::RateLimited
        } else if status.is_server_error() {
            EndpointError::Server { status: status.as_u16(), body }
        } else {
            EndpointError::Rejected { status: status.as_u16(), body }
        }
    }
}

/// Exponential backoff for retryable endpoint errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub retry_budget: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { retry_budget: 3, base_delay_ms: 500, max_delay_ms: 16_000 }
    }
}

impl RetryPolicy {
    pub fn delay_for_attempt(&self, attempt: u32) -> Duration {
        let factor = 2u64.saturating_pow(attempt);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }

    pub async fn run<T, F, Fut>(&self, mut call: F) -> Result<T, EndpointError>
    where
        F: FnMut() -> Fut,
        Fut: std::future::Future<Output = Result<T, EndpointError>>,
    {
        let mut attempt = 0;
        loop {
            match call().await {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() => {
                    if attempt >= self.retry_budget {
                        return Err(EndpointError::BudgetExhausted { attempts: attempt + 1, last: Box::new(e) });
                    }
                    let delay = self.delay_for_attempt(attempt);
                    log::debug!("retrying after {e} in {delay:?}");
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[async_trait]
pub trait ChatClient: Send + Sync {
    /// Returns the assistant message content.
    async fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError>;
}

#[async_trait]
impl<T: ChatClient + ?Sized> ChatClient for Arc<T> {
    async fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        (**self).complete(request).await
    }
}

/// Client for an OpenAI-compatible `chat/completions` URL.
pub struct HttpChatClient {
    http: reqwest::Client,
    endpoint: Url,
    api_key: Option<String>,
    retry: RetryPolicy,
    permits: Arc<Semaphore>,
}

impl HttpChatClient {
    pub fn new(endpoint: Url, timeout: Duration, retry: RetryPolicy, permits: Arc<Semaphore>) -> Result<Self, EndpointError> {
        let http = reqwest::Client::builder().timeout(timeout).build().map_err(EndpointError::from_reqwest)?;
        Ok(Self { http, endpoint, api_key: None, retry, permits })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    async fn once(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let _permit = self.permits.acquire().await.expect("semaphore never closed");
        let mut builder = self.http.post(self.endpoint.clone()).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().await.map_err(EndpointError::from_reqwest)?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(EndpointError::from_status(status, body));
        }
        let value: serde_json::Value = resp.json().await.map_err(EndpointError::from_reqwest)?;
        value
            .pointer("/choices/0/message/content")
            .and_then(serde_json::Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| EndpointError::MalformedResponse("missing choices[0].message.content".into()))
    }
}

#[async_trait]
impl ChatClient for HttpChatClient {
    async fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        self.retry.run(|| self.once(request)).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    #[test]
    fn request_wire_shape() {
        let r = ChatRequest::user("gpt", "hi");
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"model":"gpt","temperature":0.0,"messages":[{"role":"user","content":"hi"}]}"#
        );
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy { retry_budget: 5, base_delay_ms: 100, max_delay_ms: 350 };
        assert_eq!(p.delay_for_attempt(0), Duration::from_millis(100));
        assert_eq!(p.delay_for_attempt(1), Duration::from_millis(200));
        assert_eq!(p.delay_for_attempt(2), Duration::from_millis(350));
        assert_eq!(p.delay_for_attempt(60), Duration::from_millis(350));
    }

    #[tokio::test]
    async fn retry_until_budget() {
        let p = RetryPolicy { retry_budget: 2, base_delay_ms: 1, max_delay_ms: 1 };
        let calls = AtomicU32::new(0);
        let r: Result<(), _> = p
            .run(|| async {
                calls.fetch_add(1, Ordering::SeqCst);
                Err(EndpointError::RateLimited)
            })
            .await;
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        assert!(matches!(r, Err(EndpointError::BudgetExhausted { attempts: 3, .. })));
    }

    #[tokio::test]
    async fn non_retryable_returns_immediately() {
        let p = RetryPolicy { retry_budget: 5, base_delay_ms: 1, max_delay_ms: 1 };
        let calls = AtomicU32::new(0);
        let r: Result<(), _> = p
            .run(|| async {
                calls.fetch_add(1, Ordering::SeqCst);
                Err(EndpointError::MalformedResponse("x".into()))
            })
            .await;
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(r, Err(EndpointError::MalformedResponse("x".into())));
    }

    #[tokio::test]
    async fn succeeds_after_transient() {
        let p = RetryPolicy { retry_budget: 3, base_delay_ms: 1, max_delay_ms: 1 };
        let calls = AtomicU32::new(0);
        let r = p
            .run(|| async {
                if calls.fetch_add(1, Ordering::SeqCst) < 2 {
                    Err(EndpointError::Timeout)
                } else {
                    Ok(7)
                }
            })
            .await;
        assert_eq!(r, Ok(7));
    }
}
