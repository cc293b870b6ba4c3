//! Domain types shared by every stage of the pipeline.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::prompt::render_prompt;
use crate::ratio::Ratio;

/// Relevance label of a source with respect to the instruction's question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relevance {
    Relevant,
    Irrelevant,
    /// Imported evidence without labels.
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Synthesized,
    Imported,
}

/// A named evidence paragraph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    pub name: String,
    pub content: String,
    pub relevance: Relevance,
    #[serde(default)]
    pub origin: Origin,
}

impl Source {
    pub fn synthesized(name: impl Into<String>, content: impl Into<String>, relevance: Relevance) -> Self {
        Self { name: name.into(), content: content.into(), relevance, origin: Origin::Synthesized }
    }

    pub fn imported(name: impl Into<String>, content: impl Into<String>) -> Self {
        Self { name: name.into(), content: content.into(), relevance: Relevance::Unknown, origin: Origin::Imported }
    }

    pub fn with_relevance(mut self, relevance: Relevance) -> Self {
        self.relevance = relevance;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub topic: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("question text is empty")]
    EmptyQuestion,
    #[error("source {index} has an empty name")]
    EmptySourceName { index: usize },
    #[error("source `{name}` has empty content")]
    EmptySourceContent { name: String },
}

/// A question together with the ordered sources shown to the model and the
/// prompt built from both.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub question: Question,
    pub sources: Vec<Source>,
    pub rendered_prompt: String,
}

impl Instruction {
    /// Builds an instruction, renaming duplicate source names to `name#2`,
    /// `name#3`, ... in order of appearance, and rendering the prompt.
    pub fn new(question: Question, sources: Vec<Source>) -> Result<Self, ModelError> {
        if question.text.trim().is_empty() {
            return Err(ModelError::EmptyQuestion);
        }
        for (index, s) in sources.iter().enumerate() {
            if s.name.trim().is_empty() {
                return Err(ModelError::EmptySourceName { index });
            }
            if s.content.trim().is_empty() {
                return Err(ModelError::EmptySourceContent { name: s.name.clone() });
            }
        }
        let sources = dedupe_names(sources);
        let rendered_prompt = render_prompt(&question.text, &sources);
        Ok(Self { question, sources, rendered_prompt })
    }

    pub fn source(&self, name: &str) -> Option<&Source> {
        self.sources.iter().find(|s| s.name == name)
    }

    pub fn count(&self, relevance: Relevance) -> usize {
        self.sources.iter().filter(|s| s.relevance == relevance).count()
    }

    /// An instruction is treated as synthesized when any of its sources is.
    pub fn is_synthesized(&self) -> bool {
        self.sources.iter().any(|s| s.origin == Origin::Synthesized)
    }
}

fn dedupe_names(sources: Vec<Source>) -> Vec<Source> {
    let mut taken: HashSet<String> = sources.iter().map(|s| s.name.clone()).collect();
    let mut seen: HashSet<String> = HashSet::new();
    sources
        .into_iter()
        .map(|mut s| {
            if !seen.insert(s.name.clone()) {
                let mut k = 2;
                let renamed = loop {
                    let candidate = format!("{}#{}", s.name, k);
                    if !taken.contains(&candidate) {
                        break candidate;
                    }
                    k += 1;
                };
                taken.insert(renamed.clone());
                seen.insert(renamed.clone());
                s.name = renamed;
            }
            s
        })
        .collect()
}

/// A parsed `(author, year, page)` citation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    pub raw: String,
    pub author: String,
    pub year: String,
    pub page: String,
    pub matched_source: Option<String>,
}

impl Citation {
    /// The text between the outer brackets.
    pub fn interior(&self) -> &str {
        let mut chars = self.raw.chars();
        chars.next();
        chars.next_back();
        chars.as_str()
    }
}

/// Per-sentence parse and entailment outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceVerdict {
    pub text: String,
    pub citation: Option<Citation>,
    /// Number of citation-shaped spans anywhere in the sentence.
    pub citation_spans: usize,
    pub format_ok: bool,
    /// `None` means not evaluated.
    pub entailed: Option<bool>,
}

/// Source-quality score; serialized as `0` or `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SourceQuality {
    Zero,
    One,
}

impl SourceQuality {
    pub fn as_u8(self) -> u8 {
        match self {
            SourceQuality::Zero => 0,
            SourceQuality::One => 1,
        }
    }

    pub fn as_ratio(self) -> Ratio {
        match self {
            SourceQuality::Zero => Ratio::ZERO,
            SourceQuality::One => Ratio::ONE,
        }
    }
}

impl From<bool> for SourceQuality {
    fn from(b: bool) -> Self {
        if b {
            SourceQuality::One
        } else {
            SourceQuality::Zero
        }
    }
}

impl Serialize for SourceQuality {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for SourceQuality {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match u8::deserialize(deserializer)? {
            0 => Ok(SourceQuality::Zero),
            1 => Ok(SourceQuality::One),
            other => Err(serde::de::Error::custom(format!("source quality must be 0 or 1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub generator: Option<String>,
}

/// Scores for one answer. `None` always means not applicable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scores {
    pub sentences: Vec<SentenceVerdict>,
    pub source_quality: Option<SourceQuality>,
    pub attributability: Option<Ratio>,
    pub attributability_entail_only: Option<Ratio>,
    pub format_rate: Ratio,
}

impl Scores {
    /// Number of sentences containing at least one citation-shaped span.
    pub fn citing_sentences(&self) -> usize {
        self.sentences.iter().filter(|s| s.citation_spans > 0).count()
    }
}

/// One corpus entry: an instruction, optionally answered and scored.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub instruction: Instruction,
    pub answer: Option<Answer>,
    pub scores: Option<Scores>,
    /// Fields read from storage that this toolkit does not interpret.
    pub extra: Map<String, Value>,
}

impl Record {
    pub fn new(instruction: Instruction) -> Self {
        Self { instruction, answer: None, scores: None, extra: Map::new() }
    }

    pub fn id(&self) -> &str {
        &self.instruction.question.id
    }

    /// The legitimate no-answer case: nothing relevant was offered, nothing
    /// was cited, and source quality is one.
    pub fn is_refusal(&self) -> bool {
        match &self.scores {
            Some(s) => {
                self.instruction.count(Relevance::Relevant) == 0
                    && s.citing_sentences() == 0
                    && s.source_quality == Some(SourceQuality::One)
            }
            None => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    #[default]
    Base,
    Plus,
    #[serde(rename = "plusplus")]
    PlusPlus,
    External,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Base => "base",
            Tier::Plus => "plus",
            Tier::PlusPlus => "plusplus",
            Tier::External => "external",
        })
    }
}

/// Header metadata carried with every corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub tier: Tier,
    pub records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_records: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retained_refusals: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provenance: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub tier: Tier,
    pub manifest: Manifest,
    pub records: Vec<Record>,
}

impl Corpus {
    pub fn new(tier: Tier, records: Vec<Record>) -> Self {
        let manifest = Manifest { tier, records: records.len(), ..Manifest::default() };
        Self { tier, manifest, records }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(Record::id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q() -> Question {
        Question { id: "q1".into(), topic: "Physics".into(), text: "What is dark matter?".into() }
    }

    #[test]
    fn duplicate_names_are_suffixed_in_order() {
        let sources = vec![
            Source::imported("A", "one"),
            Source::imported("B", "two"),
            Source::imported("A", "three"),
            Source::imported("A", "four"),
        ];
        let inst = Instruction::new(q(), sources).unwrap();
        let names: Vec<_> = inst.sources.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["A", "B", "A#2", "A#3"]);
    }

    #[test]
    fn suffix_skips_names_already_present() {
        let sources = vec![Source::imported("A", "x"), Source::imported("A#2", "y"), Source::imported("A", "z")];
        let inst = Instruction::new(q(), sources).unwrap();
        let names: Vec<_> = inst.sources.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["A", "A#2", "A#3"]);
    }

    #[test]
    fn rejects_empty_fields() {
        let mut empty_q = q();
        empty_q.text = "  ".into();
        assert_eq!(Instruction::new(empty_q, vec![]), Err(ModelError::EmptyQuestion));
        assert!(matches!(
            Instruction::new(q(), vec![Source::imported("", "x")]),
            Err(ModelError::EmptySourceName { index: 0 })
        ));
        assert!(matches!(
            Instruction::new(q(), vec![Source::imported("A", "")]),
            Err(ModelError::EmptySourceContent { .. })
        ));
    }

    #[test]
    fn citation_interior_strips_brackets() {
        let c = Citation {
            raw: "[Mishra et al., 2019, p.54]".into(),
            author: "Mishra et al.".into(),
            year: "2019".into(),
            page: "p.54".into(),
            matched_source: None,
        };
        assert_eq!(c.interior(), "Mishra et al., 2019, p.54");
    }

    #[test]
    fn tier_serializes_lowercase() {
        assert_eq!(serde_json::to_string(&Tier::PlusPlus).unwrap(), "\"plusplus\"");
        assert_eq!(serde_json::from_str::<Tier>("\"plus\"").unwrap(), Tier::Plus);
    }
}
