//! Endpoint-facing half of the evqa toolkit: chat clients with retry and
//! transcripts, entailment backends, corpus generation and scoring.

pub mod canned;
pub mod chat;
pub mod datagen;
pub mod entail;
pub mod score;
pub mod transcript;

pub use chat::{ChatClient, ChatRequest, EndpointError};
pub use entail::{Backend, BackendConfig, BackendKind};
pub use transcript::{CachingClient, TranscriptStore};
