//! Descriptive statistics of instructions and answers in a corpus.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::citation::{all_citations, match_source, segment_sentences, SegmentError, SegmentationRules};
use crate::model::Corpus;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub samples: usize,
    pub avg_sources: f64,
    pub words_per_source_avg: f64,
    /// Sample standard deviation over all sources.
    pub words_per_source_std: f64,
    pub answers: usize,
    pub avg_sentences: f64,
    /// Words per sentence, pooled over every answer sentence.
    pub avg_sentence_words: f64,
    pub avg_unique_citations: f64,
}

fn words(s: &str) -> usize {
    s.split_whitespace().count()
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn describe(corpus: &Corpus, rules: &SegmentationRules) -> Result<CorpusStats, SegmentError> {
    let mut source_words = Vec::new();
    let mut source_counts = Vec::new();
    let mut sentence_counts = Vec::new();
    let mut unique_citations = Vec::new();
    let (mut total_sentence_words, mut total_sentences) = (0usize, 0usize);

    for r in &corpus.records {
        let sources = &r.instruction.sources;
        source_counts.push(sources.len() as f64);
        source_words.extend(sources.iter().map(|s| words(&s.content) as f64));
        let Some(answer) = &r.answer else { continue };
        let sentences = segment_sentences(&answer.text, rules)?;
        sentence_counts.push(sentences.len() as f64);
        total_sentences += sentences.len();
        total_sentence_words += sentences.iter().map(|s| words(s)).sum::<usize>();
        let cited: BTreeSet<String> = sentences
            .iter()
            .flat_map(|s| all_citations(s))
            .map(|c| match_source(&c, sources).unwrap_or_else(|| c.interior().split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()))
            .collect();
        unique_citations.push(cited.len() as f64);
    }

    Ok(CorpusStats {
        samples: corpus.records.len(),
        avg_sources: mean(&source_counts),
        words_per_source_avg: mean(&source_words),
        words_per_source_std: sample_std(&source_words),
        answers: sentence_counts.len(),
        avg_sentences: mean(&sentence_counts),
        avg_sentence_words: if total_sentences == 0 { 0.0 } else { total_sentence_words as f64 / total_sentences as f64 },
        avg_unique_citations: mean(&unique_citations),
    })
}

pub const DESCRIBE_HEADER: &str =
    "corpus\tsamples\tavg_sources\twords_per_source_avg\twords_per_source_std\tanswers\tavg_sentences\tavg_sentence_words\tavg_unique_citations";

impl CorpusStats {
    pub fn tsv_row(&self, label: &str) -> String {
        let mut out = String::new();
        let _ = write!(
            out,
            "{label}\t{}\t{:.2}\t{:.2}\t{:.2}\t{}\t{:.2}\t{:.2}\t{:.2}",
            self.samples,
            self.avg_sources,
            self.words_per_source_avg,
            self.words_per_source_std,
            self.answers,
            self.avg_sentences,
            self.avg_sentence_words,
            self.avg_unique_citations
        );
        out
    }
}
