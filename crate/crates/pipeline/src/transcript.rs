//! Persisted request/response pairs, addressed by a hash of the request.
//!
//! A transcript directory holds `transcripts.jsonl`, one entry per line.
//! Replaying the same requests against the directory never touches the
//! network.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chat::{ChatClient, ChatRequest, EndpointError};

pub const TRANSCRIPT_FILE: &str = "transcripts.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub key: String,
    pub request: ChatRequest,
    pub response: String,
}

pub fn request_key(request: &ChatRequest) -> String {
    let body = serde_json::to_vec(request).expect("request serializes");
    hex::encode(Sha256::digest(&body))
}

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} line {line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
}

#[derive(Debug)]
pub struct TranscriptStore {
    path: PathBuf,
    entries: Mutex<HashMap<String, String>>,
}

impl TranscriptStore {
    /// Opens (creating if needed) the store in `dir`.
    pub fn open(dir: &Path) -> Result<Self, TranscriptError> {
        fs::create_dir_all(dir).map_err(|source| TranscriptError::Io { path: dir.into(), source })?;
        let path = dir.join(TRANSCRIPT_FILE);
        let mut entries = HashMap::new();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|source| TranscriptError::Io { path: path.clone(), source })?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let e: TranscriptEntry = serde_json::from_str(line).map_err(|e| TranscriptError::Malformed {
                    path: path.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                entries.insert(e.key, e.response);
            }
        }
        Ok(Self { path, entries: Mutex::new(entries) })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.lock().expect("transcript lock").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("transcript lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn record(&self, request: &ChatRequest, response: &str) -> Result<(), TranscriptError> {
        let key = request_key(request);
        let mut entries = self.entries.lock().expect("transcript lock");
        if entries.contains_key(&key) {
            return Ok(());
        }
        let entry = TranscriptEntry { key: key.clone(), request: request.clone(), response: response.to_string() };
        let mut line = serde_json::to_string(&entry).expect("entry serializes");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|source| TranscriptError::Io { path: self.path.clone(), source })?;
        f.write_all(line.as_bytes()).map_err(|source| TranscriptError::Io { path: self.path.clone(), source })?;
        entries.insert(key, response.to_string());
        Ok(())
    }
}

/// Serves recorded responses; misses go to `upstream` and are recorded, or
/// fail with [`EndpointError::ReplayMiss`] when there is no upstream.
pub struct CachingClient {
    store: Arc<TranscriptStore>,
    upstream: Option<Arc<dyn ChatClient>>,
}

impl CachingClient {
    pub fn new(store: Arc<TranscriptStore>, upstream: Option<Arc<dyn ChatClient>>) -> Self {
        Self { store, upstream }
    }

    pub fn replay_only(store: Arc<TranscriptStore>) -> Self {
        Self::new(store, None)
    }
}

#[async_trait]
impl ChatClient for CachingClient {
    async fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let key = request_key(request);
        if let Some(hit) = self.store.get(&key) {
            return Ok(hit);
        }
        let Some(upstream) = &self.upstream else {
            return Err(EndpointError::ReplayMiss { key });
        };
        let response = upstream.complete(request).await?;
        if let Err(e) = self.store.record(request, &response) {
            log::warn!("could not persist transcript: {e}");
        }
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting(AtomicUsize);

    #[async_trait]
    impl ChatClient for Counting {
        async fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(format!("echo {}", request.messages[0].content))
        }
    }

    #[test]
    fn key_is_stable_and_content_sensitive() {
        let a = ChatRequest::user("m", "x");
        assert_eq!(request_key(&a), request_key(&a.clone()));
        assert_ne!(request_key(&a), request_key(&ChatRequest::user("m", "y")));
        assert_ne!(request_key(&a), request_key(&ChatRequest::user("n", "x")));
        assert_eq!(request_key(&a).len(), 64);
    }

    #[tokio::test]
    async fn records_then_replays() {
        let dir = tempfile::tempdir().unwrap();
        let upstream = Arc::new(Counting(AtomicUsize::new(0)));
        let store = Arc::new(TranscriptStore::open(dir.path()).unwrap());
        let client = CachingClient::new(store, Some(upstream.clone()));
        let req = ChatRequest::user("m", "hello");
        assert_eq!(client.complete(&req).await.unwrap(), "echo hello");
        assert_eq!(client.complete(&req).await.unwrap(), "echo hello");
        assert_eq!(upstream.0.load(Ordering::SeqCst), 1);

        let reopened = Arc::new(TranscriptStore::open(dir.path()).unwrap());
        assert_eq!(reopened.len(), 1);
        let replay = CachingClient::replay_only(reopened);
        assert_eq!(replay.complete(&req).await.unwrap(), "echo hello");
        let miss = replay.complete(&ChatRequest::user("m", "other")).await;
        assert!(matches!(miss, Err(EndpointError::ReplayMiss { .. })));
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(TRANSCRIPT_FILE), "\n{not json}\n").unwrap();
        let err = TranscriptStore::open(dir.path()).unwrap_err();
        assert!(matches!(err, TranscriptError::Malformed { line: 2, .. }));
    }
}
