//! Invariant checks for records and corpora. Violations are data.

use std::collections::HashSet;
use std::fmt;

use crate::model::{Corpus, Origin, Record, Relevance, Tier};
use crate::prompt::render_prompt;
use crate::scoring::{self, cited_sources};

pub const RELEVANT_RANGE: (usize, usize) = (0, 3);
pub const IRRELEVANT_RANGE: (usize, usize) = (3, 6);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self { field: field.into(), rule: rule.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Checks every record-level invariant. An empty list means the record is
/// valid.
pub fn validate_record(record: &Record) -> Vec<Violation> {
    let mut out = Vec::new();
    let inst = &record.instruction;

    if inst.question.text.trim().is_empty() {
        out.push(Violation::new("question.text", "must be non-empty"));
    }
    let mut names = HashSet::new();
    for (i, s) in inst.sources.iter().enumerate() {
        if s.name.trim().is_empty() {
            out.push(Violation::new(format!("sources[{i}].name"), "must be non-empty"));
        } else if !names.insert(s.name.as_str()) {
            out.push(Violation::new(format!("sources[{i}].name"), format!("duplicate name `{}`", s.name)));
        }
        if s.content.trim().is_empty() {
            out.push(Violation::new(format!("sources[{i}].content"), "must be non-empty"));
        }
        if s.relevance == Relevance::Unknown && s.origin == Origin::Synthesized {
            out.push(Violation::new(format!("sources[{i}].relevance"), "unknown relevance on a synthesized source"));
        }
    }
    if inst.is_synthesized() {
        let rel = inst.count(Relevance::Relevant);
        let irr = inst.count(Relevance::Irrelevant);
        if !(RELEVANT_RANGE.0..=RELEVANT_RANGE.1).contains(&rel) {
            out.push(Violation::new(
                "sources",
                format!("relevant count {rel} ∉ [{},{}]", RELEVANT_RANGE.0, RELEVANT_RANGE.1),
            ));
        }
        if !(IRRELEVANT_RANGE.0..=IRRELEVANT_RANGE.1).contains(&irr) {
            out.push(Violation::new(
                "sources",
                format!("irrelevant count {irr} ∉ [{},{}]", IRRELEVANT_RANGE.0, IRRELEVANT_RANGE.1),
            ));
        }
    }
    if inst.rendered_prompt != render_prompt(&inst.question.text, &inst.sources) {
        out.push(Violation::new("rendered_prompt", "differs from the rendered template"));
    }

    let Some(scores) = &record.scores else {
        return out;
    };
    if record.answer.is_none() {
        out.push(Violation::new("answer", "scored record without an answer"));
    }
    for (i, s) in scores.sentences.iter().enumerate() {
        if s.format_ok {
            let matched = s.citation.as_ref().is_some_and(|c| c.matched_source.is_some());
            if !matched || s.citation_spans != 1 {
                out.push(Violation::new(
                    format!("sentences[{i}].format_ok"),
                    "requires exactly one citation matched to a source",
                ));
            }
            if s.entailed.is_none() {
                out.push(Violation::new(format!("sentences[{i}].entailed"), "format-correct sentence not evaluated"));
            }
        } else if s.entailed.is_some() {
            out.push(Violation::new(format!("sentences[{i}].entailed"), "set on a format-incorrect sentence"));
        }
        if let Some(name) = s.citation.as_ref().and_then(|c| c.matched_source.as_deref()) {
            if inst.source(name).is_none() {
                out.push(Violation::new(format!("sentences[{i}].citation"), format!("matched unknown source `{name}`")));
            }
        }
    }

    let total = scores.sentences.len();
    let entailed = scores.sentences.iter().filter(|s| s.format_ok && s.entailed == Some(true)).count();
    let unentailed = scores.sentences.iter().filter(|s| s.format_ok && s.entailed == Some(false)).count();
    let wrong_format = total - entailed - unentailed;
    let citing = scores.citing_sentences();
    match scores.attributability {
        Some(attr) => {
            let direct = attr.num() as usize * total == entailed * attr.den() as usize;
            let complement =
                (attr.den() - attr.num()) as usize * total == (unentailed + wrong_format) * attr.den() as usize;
            if citing == 0 || !direct || !complement {
                out.push(Violation::new("attributability", "entailed/total identity violated"));
            }
        }
        None if citing > 0 => {
            out.push(Violation::new("attributability", "not applicable despite cited sentences"));
        }
        None => {}
    }
    let format_ok = entailed + unentailed;
    match scores.attributability_entail_only {
        Some(r) if format_ok == 0 || r.num() as usize * format_ok != entailed * r.den() as usize => {
            out.push(Violation::new("attributability_entail_only", "entailed/format-correct identity violated"));
        }
        None if format_ok > 0 => {
            out.push(Violation::new("attributability_entail_only", "not applicable despite format-correct sentences"));
        }
        _ => {}
    }
    if let (Some(a), Some(e)) = (scores.attributability, scores.attributability_entail_only) {
        if e.cmp_value(a).is_lt() {
            out.push(Violation::new("attributability_entail_only", "smaller than attributability"));
        }
    }
    if total == 0 || scores.format_rate.num() as usize * total != format_ok * scores.format_rate.den() as usize {
        out.push(Violation::new("format_rate", "format-correct/total identity violated"));
    }

    let any_unknown = inst.sources.iter().any(|s| s.relevance == Relevance::Unknown);
    match (scores.source_quality, any_unknown) {
        (Some(_), true) => out.push(Violation::new("source_quality", "applicable despite unlabeled sources")),
        (None, false) => out.push(Violation::new("source_quality", "not applicable despite labeled sources")),
        (Some(sq), false) => {
            let cited = cited_sources(&scores.sentences, &inst.sources);
            if scoring::source_quality(&cited, &inst.sources).ok().flatten() != Some(sq) {
                out.push(Violation::new("source_quality", "disagrees with cited sources"));
            }
        }
        (None, true) => {}
    }
    out
}

/// Tier invariants and id uniqueness across a corpus, plus every record's
/// own violations prefixed with its id.
pub fn validate_corpus(corpus: &Corpus) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for r in &corpus.records {
        let id = r.id();
        if !ids.insert(id) {
            out.push(Violation::new(format!("{id}.id"), "duplicate id"));
        }
        for v in validate_record(r) {
            out.push(Violation::new(format!("{id}.{}", v.field), v.rule));
        }
        out.extend(tier_violations(corpus.tier, r));
    }
    out
}

pub fn tier_violations(tier: Tier, r: &Record) -> Vec<Violation> {
    let id = r.id();
    let mut out = Vec::new();
    if matches!(tier, Tier::Plus | Tier::PlusPlus) {
        match &r.scores {
            None => out.push(Violation::new(format!("{id}.scores"), format!("{tier} tier requires scores"))),
            Some(s) => {
                if s.source_quality != Some(crate::model::SourceQuality::One) {
                    out.push(Violation::new(format!("{id}.source_quality"), format!("{tier} tier requires 1")));
                }
                if tier == Tier::PlusPlus && !s.attributability.is_some_and(|a| a.is_one()) && !r.is_refusal() {
                    out.push(Violation::new(
                        format!("{id}.attributability"),
                        "plusplus tier requires 1 unless the record is a refusal",
                    ));
                }
            }
        }
    }
    out
}
