//! A deterministic offline stand-in for a chat model.
//!
//! It recognises the generation, answer and judge prompts and produces
//! well-formed completions from their arguments alone. Wrapped in a
//! recording [`crate::transcript::CachingClient`] it yields transcripts that
//! drive the whole toolkit without network access.

use async_trait::async_trait;
use sha2::{Digest, Sha256};

use crate::chat::{ChatClient, ChatRequest, EndpointError};
use crate::entail::stub_overlap;

const TOPICS: &[&str] = &[
    "Corporate finance",
    "Anthropology",
    "Electromagnetism",
    "Dark matter",
    "Renewable energy",
    "Behavioral economics",
    "Marine biology",
    "Urban sociology",
    "Climate adaptation",
    "Quantum optics",
    "Soil ecology",
    "Monetary policy",
];

const ASPECTS: &[&str] = &[
    "measurement error",
    "public funding",
    "regulation",
    "historical context",
    "data sharing",
    "model uncertainty",
    "field experiments",
    "long-term monitoring",
    "risk perception",
    "technology transfer",
    "international cooperation",
    "education",
];

const AUTHORS: &[&str] = &[
    "Mishra et al.",
    "Morse et al.",
    "Okafor",
    "Lindqvist and Berg",
    "World Resources Institute",
    "Tanaka et al.",
    "Alvarez",
    "European Environment Agency",
    "Chen and Park",
    "Novak",
];

const REFUSAL: &str = "No answer can be given because none of the sources addresses the question.";

fn digest(s: &str) -> u64 {
    let d = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn between<'a>(s: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = s.find(start)? + start.len();
    let len = s[from..].find(end)?;
    Some(&s[from..from + len])
}

fn topics(n: usize) -> String {
    (0..n)
        .map(|i| match TOPICS.get(i) {
            Some(t) => t.to_string(),
            None => format!("Interdisciplinary topic {i}"),
        })
        .collect::<Vec<_>>()
        .join("||")
}

fn questions(topic: &str, n: usize) -> String {
    (0..n)
        .map(|i| match ASPECTS.get(i) {
            Some(a) => format!("What role does {a} play in {topic}?\\\\\n"),
            None => format!("What role does open problem {i} play in {topic}?\\\\\n"),
        })
        .collect()
}

fn focus(question: &str) -> String {
    between(question, "What role does ", " play in ").unwrap_or(question.trim_end_matches('?')).to_string()
}

fn paragraphs(topic: &str, question: &str, m: usize) -> String {
    let aspect = focus(question);
    (0..m)
        .map(|k| {
            let h = digest(&format!("{topic}\0{question}\0{k}"));
            let author = AUTHORS[(h % AUTHORS.len() as u64) as usize];
            let year = 1995 + (h >> 8) % 29;
            let page = 1 + (h >> 16) % 300;
            format!(
                "Work on {aspect} in {topic} reports finding number {k}. \
                 Further evidence on this point remains mixed across regions. [{author}, {year}, p.{page}] ENDOFPARAGRAPH\n"
            )
        })
        .collect()
}

fn first_sentence(content: &str) -> &str {
    content.split(". ").next().unwrap_or(content).trim_end_matches('.')
}

fn answer(prompt: &str) -> Option<String> {
    let block = between(prompt, "[BEGIN OF SOURCES]\n", " [END OF SOURCES]")?;
    let question = between(prompt, "respond to the question \"", "\" by only relying")?;
    let sources: Vec<(&str, &str)> = block.lines().filter_map(|l| l.split_once(": ")).collect();
    let key = format!("Work on {}", focus(question));
    let (relevant, other): (Vec<_>, Vec<_>) = sources.iter().partition(|(_, c)| c.starts_with(&key));
    let variant = digest(question) % 8;
    let cite = |(name, content): &(&str, &str)| format!("{} ({name}).", first_sentence(content));
    if relevant.is_empty() {
        return Some(match (variant, other.first()) {
            (3, Some(s)) => cite(s),
            _ => REFUSAL.to_string(),
        });
    }
    let mut out: Vec<String> = relevant.iter().map(cite).collect();
    match variant {
        0 => out.push("The wider picture remains open.".into()),
        1 => out.extend(other.first().map(cite)),
        2 => out[0] = format!("Nothing about this subject has ever been recorded ({}).", relevant[0].0),
        _ => {}
    }
    Some(out.join(" "))
}

fn judge(prompt: &str) -> Option<String> {
    let source = between(prompt, "SOURCE: +++ ", " +++")?;
    let sentence = between(prompt, "SENTENCE: ||| ", " |||")?;
    Some(if stub_overlap(sentence, source) {
        "[[YES]] The sentence restates the source.".into()
    } else {
        "[[NO]] The sentence is not supported by the source.".into()
    })
}

fn respond(prompt: &str) -> Option<String> {
    if let Some(n) = between(prompt, "Create ", " random topics") {
        return Some(topics(n.parse().ok()?));
    }
    if prompt.starts_with("Take the topic ") {
        let topic = between(prompt, "Take the topic ", " and create ")?;
        let n = between(prompt, " and create ", " questions")?.parse().ok()?;
        return Some(questions(topic, n));
    }
    if prompt.starts_with("Consider the following question within the topic ") {
        let head = between(prompt, "within the topic ", "\n\nPlease create ")?;
        let (topic, question) = head.split_once(": ")?;
        let m = between(prompt, "\n\nPlease create ", " paragraphs")?.parse().ok()?;
        return Some(paragraphs(topic, question, m));
    }
    if prompt.starts_with("Given are the following sources") {
        return answer(prompt);
    }
    if prompt.starts_with("Your task is to evaluate whether a SENTENCE") {
        return judge(prompt);
    }
    None
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CannedLlm;

#[async_trait]
impl ChatClient for CannedLlm {
    async fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let prompt = request.messages.last().map(|m| m.content.as_str()).unwrap_or_default();
        respond(prompt).ok_or_else(|| EndpointError::Rejected { status: 400, body: "unrecognised prompt".into() })
    }
}
