//! JSONL corpus files: a manifest header line followed by one record per
//! line. Unknown record fields survive a read/write cycle in order.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::model::{Answer, Corpus, Instruction, Manifest, ModelError, Origin, Question, Record, Relevance, Scores, SentenceVerdict, Source, SourceQuality, Tier};
use crate::ratio::Ratio;
use crate::validate::{validate_corpus, Violation};

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: {source}")]
    Model { line: usize, source: ModelError },
    #[error("line {line}: record tier {found} differs from corpus tier {expected}")]
    TierMismatch { line: usize, expected: Tier, found: Tier },
    #[error("corpus fails validation: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StorageError + '_ {
    move |source| StorageError::Io { path: path.to_path_buf(), source }
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    #[serde(rename = "type")]
    kind: String,
    #[serde(flatten)]
    manifest: Manifest,
}

#[derive(Serialize, Deserialize)]
struct SourceLine {
    name: String,
    content: String,
    relevance: Relevance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin: Option<Origin>,
}

#[derive(Serialize, Deserialize)]
struct ScoresLine {
    source_quality: Option<SourceQuality>,
    attributability: Option<Ratio>,
    attributability_entail_only: Option<Ratio>,
    format_rate: Ratio,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    topic: String,
    question: String,
    sources: Vec<SourceLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    answer: Option<Answer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<ScoresLine>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    sentence_verdicts: Vec<SentenceVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tier: Option<Tier>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

impl RecordLine {
    fn from_record(r: &Record, tier: Tier) -> Self {
        let q = &r.instruction.question;
        Self {
            id: q.id.clone(),
            topic: q.topic.clone(),
            question: q.text.clone(),
            sources: r
                .instruction
                .sources
                .iter()
                .map(|s| SourceLine {
                    name: s.name.clone(),
                    content: s.content.clone(),
                    relevance: s.relevance,
                    origin: Some(s.origin),
                })
                .collect(),
            answer: r.answer.clone(),
            scores: r.scores.as_ref().map(|s| ScoresLine {
                source_quality: s.source_quality,
                attributability: s.attributability,
                attributability_entail_only: s.attributability_entail_only,
                format_rate: s.format_rate,
            }),
            sentence_verdicts: r.scores.as_ref().map(|s| s.sentences.clone()).unwrap_or_default(),
            tier: Some(tier),
            extra: r.extra.clone(),
        }
    }

    fn into_record(self, line: usize) -> Result<(Record, Option<Tier>), StorageError> {
        let question = Question { id: self.id, topic: self.topic, text: self.question };
        let sources = self
            .sources
            .into_iter()
            .map(|s| Source {
                origin: s.origin.unwrap_or(if s.relevance == Relevance::Unknown {
                    Origin::Imported
                } else {
                    Origin::Synthesized
                }),
                name: s.name,
                content: s.content,
                relevance: s.relevance,
            })
            .collect();
        let instruction = Instruction::new(question, sources).map_err(|source| StorageError::Model { line, source })?;
        let scores = match self.scores {
            Some(s) => Some(Scores {
                sentences: self.sentence_verdicts,
                source_quality: s.source_quality,
                attributability: s.attributability,
                attributability_entail_only: s.attributability_entail_only,
                format_rate: s.format_rate,
            }),
            None if !self.sentence_verdicts.is_empty() => {
                return Err(StorageError::Malformed { line, message: "sentence_verdicts without scores".into() })
            }
            None => None,
        };
        Ok((Record { instruction, answer: self.answer, scores, extra: self.extra }, self.tier))
    }
}

/// Parses corpus text. The manifest line is optional; without one the tier
/// comes from the first record, defaulting to base.
pub fn parse_corpus(text: &str) -> Result<Corpus, StorageError> {
    let mut manifest: Option<Manifest> = None;
    let mut records = Vec::new();
    let mut tiers = Vec::new();
    let mut ids = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(raw).map_err(|e| StorageError::Malformed { line, message: e.to_string() })?;
        if value.get("type").and_then(Value::as_str) == Some("manifest") {
            if manifest.is_some() || !records.is_empty() {
                return Err(StorageError::Malformed { line, message: "manifest must be the first line".into() });
            }
            let m: ManifestLine =
                serde_json::from_value(value).map_err(|e| StorageError::Malformed { line, message: e.to_string() })?;
            manifest = Some(m.manifest);
            continue;
        }
        let rl: RecordLine =
            serde_json::from_value(value).map_err(|e| StorageError::Malformed { line, message: e.to_string() })?;
        if !ids.insert(rl.id.clone()) {
            return Err(StorageError::DuplicateId { line, id: rl.id });
        }
        let (record, tier) = rl.into_record(line)?;
        tiers.push((line, tier));
        records.push(record);
    }
    let tier = manifest
        .as_ref()
        .map(|m| m.tier)
        .or_else(|| tiers.first().and_then(|(_, t)| *t))
        .unwrap_or_default();
    for (line, t) in tiers {
        if let Some(found) = t {
            if found != tier {
                return Err(StorageError::TierMismatch { line, expected: tier, found });
            }
        }
    }
    let mut manifest = manifest.unwrap_or_else(|| Manifest { tier, ..Manifest::default() });
    manifest.records = records.len();
    let corpus = Corpus { tier, manifest, records };
    let violations = validate_corpus(&corpus);
    if !violations.is_empty() {
        return Err(StorageError::Invalid(violations));
    }
    Ok(corpus)
}

pub fn read_corpus(path: &Path) -> Result<Corpus, StorageError> {
    parse_corpus(&fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn corpus_to_string(corpus: &Corpus) -> String {
    let mut manifest = corpus.manifest.clone();
    manifest.tier = corpus.tier;
    manifest.records = corpus.records.len();
    let mut out = serde_json::to_string(&ManifestLine { kind: "manifest".into(), manifest }).expect("manifest serializes");
    out.push('\n');
    for r in &corpus.records {
        out.push_str(&serde_json::to_string(&RecordLine::from_record(r, corpus.tier)).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<(), StorageError> {
    write_text(path, &corpus_to_string(corpus))
}

fn write_text(path: &Path, text: &str) -> Result<(), StorageError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Reads any JSONL file of one type, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StorageError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_text = line.map_err(io_err(path))?;
        if line_text.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line_text)
                .map_err(|e| StorageError::Malformed { line: idx + 1, message: e.to_string() })?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), StorageError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| StorageError::Io { path: path.into(), source: e.into() })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::citation::SegmentationRules;
    use crate::scoring::{analyze_answer, score_sentences};

    fn base_line(id: &str) -> String {
        format!(
            r#"{{"id":"{id}","topic":"Physics","question":"What is dark matter?","sources":[{{"name":"A, 2020, p.1","content":"Dark matter is unseen mass.","relevance":"relevant"}},{{"name":"B, 2019, p.2","content":"Tax law.","relevance":"irrelevant"}},{{"name":"C, 2018, p.3","content":"Markets.","relevance":"irrelevant"}},{{"name":"D, 2017, p.4","content":"Cells.","relevance":"irrelevant"}}],"answer":{{"text":"Dark matter is unseen mass (A, 2020, p.1).","generator":"m"}},"note":{{"k":[1,2]}}}}"#
        )
    }

    #[test]
    fn roundtrip_is_byte_stable_and_keeps_unknown_fields() {
        let text = [base_line("a"), base_line("b"), base_line("c")].join("\n");
        let corpus = parse_corpus(&text).unwrap();
        assert_eq!(corpus.records.len(), 3);
        let first = corpus_to_string(&corpus);
        let second = corpus_to_string(&parse_corpus(&first).unwrap());
        assert_eq!(first, second);
        assert!(first.contains(r#""note":{"k":[1,2]}"#));
        assert!(first.starts_with(r#"{"type":"manifest","tier":"base","records":3}"#));
    }

    #[test]
    fn scored_roundtrip() {
        let mut corpus = parse_corpus(&base_line("a")).unwrap();
        let r = &mut corpus.records[0];
        let mut sents = analyze_answer(&r.answer.as_ref().unwrap().text, &r.instruction.sources, &SegmentationRules::default()).unwrap();
        sents[0].entailed = Some(true);
        r.scores = Some(score_sentences(sents, &r.instruction.sources).unwrap());
        let text = corpus_to_string(&corpus);
        let back = parse_corpus(&text).unwrap();
        assert_eq!(back.records, corpus.records);
        assert_eq!(corpus_to_string(&back), text);
    }

    #[test]
    fn missing_field_names_it() {
        let bad = base_line("a").replace(r#""question":"What is dark matter?","#, "");
        let err = parse_corpus(&format!("{}\n{bad}", base_line("b"))).unwrap_err();
        match err {
            StorageError::Malformed { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("question"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id() {
        let err = parse_corpus(&[base_line("a"), base_line("a")].join("\n")).unwrap_err();
        assert!(matches!(err, StorageError::DuplicateId { line: 2, .. }));
    }

    #[test]
    fn plusplus_with_partial_attr_is_invalid() {
        let mut corpus = parse_corpus(&base_line("a")).unwrap();
        let r = &mut corpus.records[0];
        r.answer.as_mut().unwrap().text = "Dark matter is unseen mass (A, 2020, p.1). It is cold.".into();
        let mut sents = analyze_answer(&r.answer.as_ref().unwrap().text, &r.instruction.sources, &SegmentationRules::default()).unwrap();
        sents[0].entailed = Some(true);
        r.scores = Some(score_sentences(sents, &r.instruction.sources).unwrap());
        assert_eq!(r.scores.as_ref().unwrap().attributability, Ratio::new(1, 2));
        corpus.tier = Tier::PlusPlus;
        let err = parse_corpus(&corpus_to_string(&corpus)).unwrap_err();
        assert!(matches!(err, StorageError::Invalid(ref v) if v.iter().any(|v| v.field.ends_with("attributability"))), "{err}");
    }

    #[test]
    fn unlabeled_sources_default_to_imported() {
        let line = r#"{"id":"x","topic":"","question":"Q?","sources":[{"name":"S","content":"c","relevance":"unknown"},{"name":"S","content":"d","relevance":"unknown"}]}"#;
        let c = parse_corpus(line).unwrap();
        assert_eq!(c.records[0].instruction.sources[0].origin, Origin::Imported);
        assert_eq!(c.records[0].instruction.sources[1].name, "S#2");
    }

    #[test]
    fn jsonl_helpers() {
        let dir = std::env::temp_dir().join(format!("evqa-jsonl-{}", std::process::id()));
        let path = dir.join("q.jsonl");
        let qs = vec![Question { id: "1".into(), topic: "t".into(), text: "a".into() }];
        write_jsonl(&path, &qs).unwrap();
        assert_eq!(read_jsonl::<Question>(&path).unwrap(), qs);
        fs::remove_dir_all(dir).unwrap();
    }
}
