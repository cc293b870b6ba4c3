//! Core of the evqa toolkit: the evidence-based QA data model, answer
//! parsing, scoring, tier filters, statistics and corpus storage.
//!
//! Everything here is synchronous and free of I/O except [`storage`].

pub mod citation;
pub mod describe;
pub mod filters;
pub mod model;
pub mod prompt;
pub mod ratio;
pub mod scoring;
pub mod stats;
pub mod storage;
pub mod validate;

pub use citation::{count_citations, match_source, parse_citation, segment_sentences, SegmentationRules};
pub use model::{Answer, Citation, Corpus, Instruction, Manifest, Origin, Question, Record, Relevance, Scores, SentenceVerdict, Source, SourceQuality, Tier};
pub use prompt::render_prompt;
pub use ratio::Ratio;
pub use validate::{validate_record, Violation};
