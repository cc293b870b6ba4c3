//! Parses answers and fills in entailment decisions for every
//! format-correct sentence.

use evqa_core::citation::{claim_text, SegmentError};
use evqa_core::scoring::{analyze_answer, score_sentences, ScoringError};
use evqa_core::{Corpus, Record, SegmentationRules};
use futures::stream::{self, StreamExt, TryStreamExt};

use crate::entail::{predict_aggregated, AggregateError, Backend, EntailmentQuery};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("record {id} has no answer")]
    Unanswered { id: String },
    #[error("record {id}: {source}")]
    Segment { id: String, source: SegmentError },
    #[error("record {id}: {source}")]
    Scoring { id: String, source: ScoringError },
    #[error("record {id}: {source}")]
    Entailment { id: String, source: AggregateError },
}

impl ScoreError {
    pub fn is_endpoint(&self) -> bool {
        matches!(self, ScoreError::Entailment { source: AggregateError::Backend { .. }, .. })
    }
}

pub struct Scorer {
    pub backends: Vec<Backend>,
    pub rules: SegmentationRules,
    pub concurrency: usize,
}

impl Scorer {
    pub fn new(backends: Vec<Backend>, rules: SegmentationRules, concurrency: usize) -> Self {
        Self { backends, rules, concurrency: concurrency.max(1) }
    }

    /// Scores one record, replacing any previous scores.
    pub async fn score_record(&self, record: &Record) -> Result<Record, ScoreError> {
        let id = record.id().to_string();
        let answer = record.answer.as_ref().ok_or_else(|| ScoreError::Unanswered { id: id.clone() })?;
        let inst = &record.instruction;
        let mut sentences = analyze_answer(&answer.text, &inst.sources, &self.rules)
            .map_err(|source| ScoreError::Segment { id: id.clone(), source })?;
        for s in sentences.iter_mut().filter(|s| s.format_ok) {
            let name = s.citation.as_ref().and_then(|c| c.matched_source.as_deref()).expect("format_ok implies a match");
            let evidence = &inst.source(name).expect("matched name exists").content;
            let verdict = match EntailmentQuery::new(claim_text(&s.text), evidence.clone(), inst.question.text.clone()) {
                Ok(q) => predict_aggregated(&self.backends, &q)
                    .await
                    .map_err(|source| ScoreError::Entailment { id: id.clone(), source })?,
                Err(_) => false,
            };
            s.entailed = Some(verdict);
        }
        let scores = score_sentences(sentences, &inst.sources).map_err(|source| ScoreError::Scoring { id, source })?;
        let mut out = record.clone();
        out.scores = Some(scores);
        Ok(out)
    }

    /// Scores every record in order. The tier is kept.
    pub async fn score_corpus(&self, corpus: &Corpus) -> Result<Corpus, ScoreError> {
        let records: Vec<Record> = stream::iter(corpus.records.iter().map(|r| self.score_record(r)))
            .buffered(self.concurrency)
            .try_collect()
            .await?;
        let mut manifest = corpus.manifest.clone();
        manifest.records = records.len();
        let labels: Vec<String> = self.backends.iter().map(Backend::label).collect();
        manifest.provenance.insert("scored_by".into(), labels.join("+"));
        Ok(Corpus { tier: corpus.tier, manifest, records })
    }
}
