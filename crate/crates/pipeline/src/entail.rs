//! Per-sentence attribution prediction backends.

use std::collections::HashSet;
use std::sync::{Arc, LazyLock};
use std::time::Duration;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use url::Url;

use crate::chat::{ChatClient, ChatRequest, EndpointError, HttpChatClient, RetryPolicy};

/// Share of claim content tokens that must appear in the evidence for the
/// overlap stub to call a claim entailed.
pub const STUB_OVERLAP_THRESHOLD: f64 = 0.6;

/// Stop words ignored by the overlap stub.
pub const STOP_WORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any", "are", "as", "at",
    "be", "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could", "did", "do",
    "does", "doing", "down", "during", "each", "few", "for", "from", "further", "had", "has", "have", "having", "he",
    "her", "here", "hers", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just", "may",
    "me", "might", "more", "most", "must", "my", "no", "nor", "not", "now", "of", "off", "on", "once", "only", "or",
    "other", "our", "ours", "out", "over", "own", "same", "shall", "she", "should", "so", "some", "such", "than",
    "that", "the", "their", "theirs", "them", "then", "there", "these", "they", "this", "those", "through", "to",
    "too", "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which", "while", "who",
    "whom", "why", "will", "with", "would", "you", "your", "yours",
];

static STOP_SET: LazyLock<HashSet<&'static str>> = LazyLock::new(|| STOP_WORDS.iter().copied().collect());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    RemoteNli,
    LlmJudge,
    StubOverlap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<Url>,
    pub model_id: String,
    pub timeout_ms: u64,
    pub retry_budget: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendConfigError {
    #[error("{0:?} backend requires an endpoint")]
    MissingEndpoint(BackendKind),
    #[error("stub backend takes no endpoint")]
    UnexpectedEndpoint,
    #[error("could not build HTTP client: {0}")]
    Client(String),
}

impl BackendConfig {
    pub fn stub() -> Self {
        Self { kind: BackendKind::StubOverlap, endpoint: None, model_id: "stub-overlap".into(), timeout_ms: 0, retry_budget: 0 }
    }

    pub fn remote_nli(endpoint: Url, model_id: impl Into<String>) -> Self {
        Self { kind: BackendKind::RemoteNli, endpoint: Some(endpoint), model_id: model_id.into(), timeout_ms: 60_000, retry_budget: 3 }
    }

    pub fn llm_judge(endpoint: Url, model_id: impl Into<String>) -> Self {
        Self { kind: BackendKind::LlmJudge, endpoint: Some(endpoint), model_id: model_id.into(), timeout_ms: 60_000, retry_budget: 3 }
    }

    pub fn validate(&self) -> Result<(), BackendConfigError> {
        match (self.kind, &self.endpoint) {
            (BackendKind::StubOverlap, Some(_)) => Err(BackendConfigError::UnexpectedEndpoint),
            (BackendKind::RemoteNli | BackendKind::LlmJudge, None) => Err(BackendConfigError::MissingEndpoint(self.kind)),
            _ => Ok(()),
        }
    }

    fn retry(&self) -> RetryPolicy {
        RetryPolicy { retry_budget: self.retry_budget, ..RetryPolicy::default() }
    }
}

/// One claim/evidence pair to judge.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EntailmentQuery {
    pub claim: String,
    pub evidence: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("claim is empty")]
    EmptyClaim,
    #[error("evidence is empty")]
    EmptyEvidence,
}

impl EntailmentQuery {
    pub fn new(claim: impl Into<String>, evidence: impl Into<String>, question: impl Into<String>) -> Result<Self, QueryError> {
        let (claim, evidence) = (claim.into(), evidence.into());
        if claim.trim().is_empty() {
            return Err(QueryError::EmptyClaim);
        }
        if evidence.trim().is_empty() {
            return Err(QueryError::EmptyEvidence);
        }
        Ok(Self { claim, evidence, question: question.into() })
    }
}

const JUDGE_PREAMBLE: &str = "Your task is to evaluate whether a SENTENCE represents the information in a SOURCE. \
This criterion is defined as faithfulness. Faithfulness answers the main question of \
\"Is the SENTENCE content justified through the SOURCE?\". The SENTENCE should reflect the information given in the SOURCE. \
If the SOURCE information does not entail the SENTENCE, then the SENTENCE is not faithful. \
The SENTENCE must not contain completely new details that are not mentioned in the SOURCE. \
However, if the SENTENCE contains the same meaning as the SOURCE but only the wording changes, the SENTENCE is still faithful.";

const JUDGE_INSTRUCTION: &str = "Answer whether the ANSWER is faithful with respect to the SOURCE given the above definition of faithfulness. \
Respond by starting with \"[[YES]]\" or \"[[NO]]\" and then justify your decision in at most one sentence.\n";

/// Faithfulness judge prompt for a chat model.
pub fn judge_prompt(query: &EntailmentQuery) -> String {
    format!(
        "{JUDGE_PREAMBLE}\n\nSOURCE: +++ {} +++\n\nSENTENCE: ||| {} |||\n\n{JUDGE_INSTRUCTION}",
        query.evidence, query.claim
    )
}

/// Reads the leading `[[YES]]`/`[[NO]]` verdict of a judge response.
pub fn parse_judge_response(response: &str) -> Result<bool, EndpointError> {
    let t = response.trim_start();
    if t.starts_with("[[YES]]") {
        Ok(true)
    } else if t.starts_with("[[NO]]") {
        Ok(false)
    } else {
        Err(EndpointError::MalformedResponse(format!(
            "judge response lacks a leading [[YES]]/[[NO]]: {:?}",
            t.chars().take(80).collect::<String>()
        )))
    }
}

fn content_tokens(s: &str) -> HashSet<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOP_SET.contains(t.as_str()))
        .collect()
}

/// Deterministic offline entailment: lowercase, strip punctuation, drop
/// stop words, then require that at least [`STUB_OVERLAP_THRESHOLD`] of the
/// claim's distinct content tokens occur in the evidence. A claim with no
/// content tokens is not entailed.
pub fn stub_overlap(claim: &str, evidence: &str) -> bool {
    let claim_tokens = content_tokens(claim);
    if claim_tokens.is_empty() {
        return false;
    }
    let evidence_tokens = content_tokens(evidence);
    let shared = claim_tokens.iter().filter(|t| evidence_tokens.contains(*t)).count();
    shared as f64 >= STUB_OVERLAP_THRESHOLD * claim_tokens.len() as f64
}

#[derive(Serialize)]
struct EntailRequest<'a> {
    claim: &'a str,
    evidence: &'a str,
    question: &'a str,
    model_id: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntailResponse {
    pub attributable: bool,
    pub raw_label: String,
}

pub struct RemoteNli {
    http: reqwest::Client,
    url: Url,
    model_id: String,
    retry: RetryPolicy,
    permits: Arc<Semaphore>,
}

impl RemoteNli {
    async fn once(&self, q: &EntailmentQuery) -> Result<bool, EndpointError> {
        let _permit = self.permits.acquire().await.expect("semaphore never closed");
        let body = EntailRequest { claim: &q.claim, evidence: &q.evidence, question: &q.question, model_id: &self.model_id };
        let resp = self.http.post(self.url.clone()).json(&body).send().await.map_err(EndpointError::from_reqwest)?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            return Err(EndpointError::from_status(status, text));
        }
        let parsed: EntailResponse = resp
            .json()
            .await
            .map_err(|e| EndpointError::MalformedResponse(format!("entail response: {e}")))?;
        Ok(parsed.attributable)
    }
}

pub struct LlmJudge {
    client: Arc<dyn ChatClient>,
    model_id: String,
}

impl LlmJudge {
    pub fn new(client: Arc<dyn ChatClient>, model_id: impl Into<String>) -> Self {
        Self { client, model_id: model_id.into() }
    }
}

/// A configured, shareable entailment backend.
pub enum Backend {
    StubOverlap,
    RemoteNli(RemoteNli),
    LlmJudge(LlmJudge),
}

impl Backend {
    /// Builds a backend; remote kinds share `permits` to bound in-flight
    /// requests.
    pub fn from_config(config: &BackendConfig, permits: Arc<Semaphore>) -> Result<Self, BackendConfigError> {
        config.validate()?;
        let timeout = Duration::from_millis(config.timeout_ms.max(1));
        match config.kind {
            BackendKind::StubOverlap => Ok(Backend::StubOverlap),
            BackendKind::RemoteNli => {
                let base = config.endpoint.clone().expect("validated");
                let url = base.join("/v1/entail").map_err(|e| BackendConfigError::Client(e.to_string()))?;
                let http = reqwest::Client::builder()
                    .timeout(timeout)
                    .build()
                    .map_err(|e| BackendConfigError::Client(e.to_string()))?;
                Ok(Backend::RemoteNli(RemoteNli { http, url, model_id: config.model_id.clone(), retry: config.retry(), permits }))
            }
            BackendKind::LlmJudge => {
                let client = HttpChatClient::new(config.endpoint.clone().expect("validated"), timeout, config.retry(), permits)
                    .map_err(|e| BackendConfigError::Client(e.to_string()))?
                    .with_api_key(std::env::var("EVQA_API_KEY").ok());
                Ok(Backend::LlmJudge(LlmJudge::new(Arc::new(client), config.model_id.clone())))
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Backend::StubOverlap => "stub-overlap".into(),
            Backend::RemoteNli(r) => format!("nli:{}", r.model_id),
            Backend::LlmJudge(j) => format!("judge:{}", j.model_id),
        }
    }

    pub async fn predict(&self, query: &EntailmentQuery) -> Result<bool, EndpointError> {
        match self {
            Backend::StubOverlap => Ok(stub_overlap(&query.claim, &query.evidence)),
            Backend::RemoteNli(r) => r.retry.run(|| r.once(query)).await,
            Backend::LlmJudge(j) => {
                let request = ChatRequest::user(j.model_id.clone(), judge_prompt(query));
                parse_judge_response(&j.client.complete(&request).await?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggregateError {
    #[error("no entailment backends configured")]
    NoBackends,
    #[error("backend {backend}: {source}")]
    Backend { backend: String, source: EndpointError },
}

/// Entailed only if every backend says so. All predictions are awaited;
/// the first error in backend order is returned.
pub async fn predict_aggregated(backends: &[Backend], query: &EntailmentQuery) -> Result<bool, AggregateError> {
    if backends.is_empty() {
        return Err(AggregateError::NoBackends);
    }
    let results = join_all(backends.iter().map(|b| b.predict(query))).await;
    let mut all = true;
    for (b, r) in backends.iter().zip(results) {
        match r {
            Ok(v) => all &= v,
            Err(source) => return Err(AggregateError::Backend { backend: b.label(), source }),
        }
    }
    Ok(all)
}
