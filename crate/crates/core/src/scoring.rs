//! Source quality, attributability and format scores.

use std::collections::BTreeSet;

use crate::citation::{all_citations, claim_text, count_citations, match_source, parse_citation, segment_sentences, SegmentError, SegmentationRules};
use crate::model::{Corpus, Relevance, Scores, SentenceVerdict, Source, SourceQuality};
use crate::ratio::{mean_percent, Ratio};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    SourceQuality,
    Attributability,
    AttributabilityEntailOnly,
    FormatRate,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::SourceQuality => "source_quality",
            Metric::Attributability => "attributability",
            Metric::AttributabilityEntailOnly => "attributability_entail_only",
            Metric::FormatRate => "format_rate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScoringError {
    #[error("cited source `{0}` is not among the instruction's sources")]
    UnknownCitedSource(String),
    #[error("sentence {index} is format-correct but has no entailment verdict")]
    MissingVerdict { index: usize },
    #[error("answer has no sentences")]
    EmptyAnswer,
    #[error("record `{id}` is not scored")]
    Unscored { id: String },
    #[error("record `{id}` has no answer")]
    Unanswered { id: String },
    #[error("no record has an applicable {0}")]
    NoApplicable(Metric),
}

fn ratio(num: usize, den: usize) -> Ratio {
    Ratio::new(num as u32, den as u32).expect("count ratio within [0, 1]")
}

/// Source quality of an answer given the names of the sources it cites.
///
/// One when something was cited and none of it is irrelevant, or when
/// nothing was cited and nothing relevant was offered; zero otherwise.
/// Not applicable when any source is unlabeled.
pub fn source_quality(cited: &BTreeSet<String>, sources: &[Source]) -> Result<Option<SourceQuality>, ScoringError> {
    let mut any_irrelevant_cited = false;
    for name in cited {
        match sources.iter().find(|s| &s.name == name) {
            Some(s) => any_irrelevant_cited |= s.relevance == Relevance::Irrelevant,
            None => return Err(ScoringError::UnknownCitedSource(name.clone())),
        }
    }
    if sources.iter().any(|s| s.relevance == Relevance::Unknown) {
        return Ok(None);
    }
    let any_relevant = sources.iter().any(|s| s.relevance == Relevance::Relevant);
    let one = if cited.is_empty() { !any_relevant } else { !any_irrelevant_cited };
    Ok(Some(one.into()))
}

fn check_verdicts(sentences: &[SentenceVerdict]) -> Result<(), ScoringError> {
    match sentences.iter().position(|s| s.format_ok && s.entailed.is_none()) {
        Some(index) => Err(ScoringError::MissingVerdict { index }),
        None => Ok(()),
    }
}

fn entailed_count(sentences: &[SentenceVerdict]) -> usize {
    sentences.iter().filter(|s| s.format_ok && s.entailed == Some(true)).count()
}

/// Share of sentences that are format-correct and entailed. Not applicable
/// when no sentence contains any citation-shaped span.
pub fn attributability(sentences: &[SentenceVerdict]) -> Result<Option<Ratio>, ScoringError> {
    check_verdicts(sentences)?;
    if sentences.iter().all(|s| s.citation_spans == 0) {
        return Ok(None);
    }
    Ok(Some(ratio(entailed_count(sentences), sentences.len())))
}

/// Attributability over format-correct sentences only.
pub fn attributability_entail_only(sentences: &[SentenceVerdict]) -> Result<Option<Ratio>, ScoringError> {
    check_verdicts(sentences)?;
    let format_ok = sentences.iter().filter(|s| s.format_ok).count();
    if format_ok == 0 {
        return Ok(None);
    }
    Ok(Some(ratio(entailed_count(sentences), format_ok)))
}

pub fn format_rate(sentences: &[SentenceVerdict]) -> Result<Ratio, ScoringError> {
    if sentences.is_empty() {
        return Err(ScoringError::EmptyAnswer);
    }
    Ok(ratio(sentences.iter().filter(|s| s.format_ok).count(), sentences.len()))
}

/// Parses one sentence against the instruction's sources. Entailment is
/// left unevaluated.
pub fn analyze_sentence(text: &str, sources: &[Source]) -> SentenceVerdict {
    let spans = count_citations(text);
    let citation = parse_citation(text).map(|mut c| {
        c.matched_source = match_source(&c, sources);
        c
    });
    let has_claim = claim_text(text).chars().any(char::is_alphanumeric);
    let format_ok = has_claim && spans == 1 && citation.as_ref().is_some_and(|c| c.matched_source.is_some());
    SentenceVerdict { text: text.to_string(), citation, citation_spans: spans, format_ok, entailed: None }
}

pub fn analyze_answer(text: &str, sources: &[Source], rules: &SegmentationRules) -> Result<Vec<SentenceVerdict>, SegmentError> {
    Ok(segment_sentences(text, rules)?.iter().map(|s| analyze_sentence(s, sources)).collect())
}

/// Names of every source matched by any citation-shaped span in the
/// sentences, including non-tail and multi-citation spans.
pub fn cited_sources(sentences: &[SentenceVerdict], sources: &[Source]) -> BTreeSet<String> {
    sentences
        .iter()
        .flat_map(|s| all_citations(&s.text))
        .filter_map(|c| match_source(&c, sources))
        .collect()
}

/// Computes every score from sentence verdicts whose format-correct
/// entries already carry entailment decisions.
pub fn score_sentences(sentences: Vec<SentenceVerdict>, sources: &[Source]) -> Result<Scores, ScoringError> {
    let format_rate = format_rate(&sentences)?;
    let attributability = attributability(&sentences)?;
    let attributability_entail_only = attributability_entail_only(&sentences)?;
    let source_quality = source_quality(&cited_sources(&sentences, sources), sources)?;
    Ok(Scores { sentences, source_quality, attributability, attributability_entail_only, format_rate })
}

/// Corpus means in percent; `None` where no record is applicable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusScores {
    pub source_quality: Option<f64>,
    pub attributability: Option<f64>,
    pub attributability_entail_only: Option<f64>,
    pub format_rate: Option<f64>,
    pub records: usize,
}

impl CorpusScores {
    pub fn get(&self, metric: Metric) -> Result<f64, ScoringError> {
        match metric {
            Metric::SourceQuality => self.source_quality,
            Metric::Attributability => self.attributability,
            Metric::AttributabilityEntailOnly => self.attributability_entail_only,
            Metric::FormatRate => self.format_rate,
        }
        .ok_or(ScoringError::NoApplicable(metric))
    }
}

/// Means over applicable records, in percent with two decimals.
pub fn corpus_scores(corpus: &Corpus) -> Result<CorpusScores, ScoringError> {
    let mut all = Vec::with_capacity(corpus.records.len());
    for r in &corpus.records {
        match &r.scores {
            Some(s) => all.push(s),
            None => return Err(ScoringError::Unscored { id: r.id().to_string() }),
        }
    }
    Ok(CorpusScores {
        source_quality: mean_percent(all.iter().filter_map(|s| s.source_quality.map(SourceQuality::as_ratio))),
        attributability: mean_percent(all.iter().filter_map(|s| s.attributability)),
        attributability_entail_only: mean_percent(all.iter().filter_map(|s| s.attributability_entail_only)),
        format_rate: mean_percent(all.iter().map(|s| s.format_rate)),
        records: all.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Instruction, Question, Record, Tier};

    fn names(ns: &[&str]) -> BTreeSet<String> {
        ns.iter().map(|s| s.to_string()).collect()
    }

    fn labelled(rel: usize, irr: usize) -> Vec<Source> {
        let mut v: Vec<Source> =
            (1..=rel).map(|i| Source::synthesized(format!("r{i}"), "c", Relevance::Relevant)).collect();
        v.extend((1..=irr).map(|i| Source::synthesized(format!("i{i}"), "c", Relevance::Irrelevant)));
        v
    }

    #[test]
    fn source_quality_cases() {
        assert_eq!(source_quality(&names(&[]), &labelled(0, 3)).unwrap(), Some(SourceQuality::One));
        assert_eq!(source_quality(&names(&["r1"]), &labelled(2, 4)).unwrap(), Some(SourceQuality::One));
        assert_eq!(source_quality(&names(&["r1", "i1"]), &labelled(2, 4)).unwrap(), Some(SourceQuality::Zero));
        assert_eq!(source_quality(&names(&[]), &labelled(2, 4)).unwrap(), Some(SourceQuality::Zero));
        let mut with_unknown = labelled(1, 3);
        with_unknown.push(Source::imported("u", "c"));
        assert_eq!(source_quality(&names(&["r1"]), &with_unknown).unwrap(), None);
        assert_eq!(source_quality(&names(&[]), &with_unknown).unwrap(), None);
    }

    #[test]
    fn source_quality_rejects_foreign_name() {
        assert_eq!(
            source_quality(&names(&["zz"]), &labelled(1, 3)),
            Err(ScoringError::UnknownCitedSource("zz".into()))
        );
    }

    fn v(spans: usize, format_ok: bool, entailed: Option<bool>) -> SentenceVerdict {
        SentenceVerdict { text: String::new(), citation: None, citation_spans: spans, format_ok, entailed }
    }

    #[test]
    fn attributability_arithmetic() {
        let s = [v(1, true, Some(true)), v(1, true, Some(true)), v(1, true, Some(true)), v(0, false, None)];
        assert_eq!(attributability(&s).unwrap(), Ratio::new(3, 4));
        let s = [v(1, true, Some(true)), v(1, true, Some(true))];
        assert_eq!(attributability(&s).unwrap(), Some(Ratio::new(2, 2).unwrap()));
        let s = [v(0, false, None), v(0, false, None), v(0, false, None)];
        assert_eq!(attributability(&s).unwrap(), None);
        let s = [
            v(1, true, Some(true)),
            v(1, true, Some(true)),
            v(1, true, Some(false)),
            v(2, false, None),
            v(0, false, None),
        ];
        assert_eq!(attributability(&s).unwrap(), Ratio::new(2, 5));
        assert_eq!(attributability_entail_only(&s).unwrap(), Ratio::new(2, 3));
    }

    #[test]
    fn entail_only_not_applicable_without_format_ok() {
        assert_eq!(attributability_entail_only(&[v(1, false, None)]).unwrap(), None);
    }

    #[test]
    fn missing_verdict_is_error() {
        let s = [v(1, true, Some(true)), v(1, true, None)];
        assert_eq!(attributability(&s), Err(ScoringError::MissingVerdict { index: 1 }));
        assert_eq!(attributability_entail_only(&s), Err(ScoringError::MissingVerdict { index: 1 }));
    }

    #[test]
    fn format_rate_cases() {
        assert_eq!(format_rate(&[v(1, true, Some(true)), v(1, true, Some(true)), v(1, true, Some(false)), v(0, false, None)]).unwrap(), Ratio::new(3, 4).unwrap());
        assert!(format_rate(&[v(1, true, Some(true))]).unwrap().is_one());
        assert_eq!(format_rate(&[v(0, false, None)]).unwrap(), Ratio::ZERO);
        assert_eq!(format_rate(&[]), Err(ScoringError::EmptyAnswer));
    }

    #[test]
    fn analyze_flags_hallucinated_and_citation_only() {
        let srcs = vec![Source::synthesized("Online2602022, 2019, p.8", "Iga Swiatek leads.", Relevance::Relevant)];
        let good = analyze_sentence("Iga Swiatek is number one (Online2602022, 2019, p.8).", &srcs);
        assert!(good.format_ok);
        assert_eq!(good.citation.unwrap().matched_source.as_deref(), Some("Online2602022, 2019, p.8"));

        let fake = analyze_sentence("Drift is random (Hudsonsonian Institution, 2017, p. 28).", &srcs);
        assert!(!fake.format_ok);
        assert_eq!(fake.citation_spans, 1);
        assert_eq!(fake.citation.unwrap().matched_source, None);

        let only = analyze_sentence("(Online2602022, 2019, p.8)", &srcs);
        assert!(!only.format_ok);

        let multi = analyze_sentence("X (Online2602022, 2019, p.8) and (Online2602022, 2019, p.8).", &srcs);
        assert!(!multi.format_ok);
    }

    #[test]
    fn hallucinated_citation_makes_attr_applicable_but_not_sq() {
        let srcs = labelled(0, 3);
        let sents = analyze_answer("Drift is random (Hudsonsonian Institution, 2017, p. 28).", &srcs, &SegmentationRules::default()).unwrap();
        let scores = score_sentences(sents, &srcs).unwrap();
        assert_eq!(scores.attributability, Some(Ratio::ZERO));
        assert_eq!(scores.source_quality, Some(SourceQuality::One));
    }

    #[test]
    fn cited_set_includes_non_tail_spans() {
        let srcs = vec![
            Source::synthesized("R, 2020, p.1", "c", Relevance::Relevant),
            Source::synthesized("I, 2021, p.2", "c", Relevance::Irrelevant),
        ];
        let sents = analyze_answer("A (R, 2020, p.1) and B (I, 2021, p.2).", &srcs, &SegmentationRules::default()).unwrap();
        assert_eq!(cited_sources(&sents, &srcs), names(&["I, 2021, p.2", "R, 2020, p.1"]));
        let scores = score_sentences(sents, &srcs).unwrap();
        assert_eq!(scores.source_quality, Some(SourceQuality::Zero));
    }

    fn scored(sq: Option<SourceQuality>, attr: Option<Ratio>) -> Record {
        let q = Question { id: format!("{sq:?}{attr:?}"), topic: "t".into(), text: "q".into() };
        let mut r = Record::new(Instruction::new(q, vec![]).unwrap());
        r.scores = Some(Scores {
            sentences: vec![],
            source_quality: sq,
            attributability: attr,
            attributability_entail_only: attr,
            format_rate: Ratio::ONE,
        });
        r
    }

    #[test]
    fn corpus_means() {
        let c = Corpus::new(Tier::Base, vec![scored(Some(SourceQuality::One), None), scored(Some(SourceQuality::Zero), None)]);
        let s = corpus_scores(&c).unwrap();
        assert_eq!(s.source_quality, Some(50.0));
        assert_eq!(s.get(Metric::Attributability), Err(ScoringError::NoApplicable(Metric::Attributability)));

        let c = Corpus::new(
            Tier::External,
            vec![scored(None, Some(Ratio::ONE)), scored(None, Ratio::new(1, 2)), scored(None, Some(Ratio::ZERO))],
        );
        let s = corpus_scores(&c).unwrap();
        assert_eq!(s.get(Metric::SourceQuality), Err(ScoringError::NoApplicable(Metric::SourceQuality)));
        assert_eq!(s.attributability, Some(50.0));
    }

    #[test]
    fn corpus_requires_scores() {
        let q = Question { id: "x".into(), topic: "t".into(), text: "q".into() };
        let c = Corpus::new(Tier::Base, vec![Record::new(Instruction::new(q, vec![]).unwrap())]);
        assert_eq!(corpus_scores(&c), Err(ScoringError::Unscored { id: "x".into() }));
    }
}
