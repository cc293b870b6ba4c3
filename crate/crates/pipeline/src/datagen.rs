//! Synthetic corpus generation: topics, questions, source paragraphs,
//! instruction assembly and answers.
//!
//! Each stage runs its requests concurrently and returns results in input
//! order. Every random draw comes from an RNG derived from the seed, the
//! stage name and the item key, so output does not depend on scheduling.

use std::collections::{BTreeMap, HashSet};

use evqa_core::model::ModelError;
use evqa_core::{Answer, Corpus, Instruction, Question, Record, Relevance, Source, Tier};
use futures::stream::{self, StreamExt, TryStreamExt};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chat::{ChatClient, ChatRequest, EndpointError};

pub const QUESTION_TERMINATOR: char = '\\';
pub const PARAGRAPH_TERMINATOR: &str = "ENDOFPARAGRAPH";
pub const TOPIC_SEPARATOR: &str = "||";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Routing {
    Standard,
    Strong,
    /// Strong with probability `strong_model_share`, else standard.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelIds {
    pub standard: String,
    pub strong: String,
}

impl Default for ModelIds {
    fn default() -> Self {
        Self { standard: "gpt-3.5-turbo-0613".into(), strong: "gpt-4-0613".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRouting {
    pub topics: Routing,
    pub questions: Routing,
    pub paragraphs: Routing,
    pub answers: Routing,
}

impl Default for StepRouting {
    fn default() -> Self {
        Self { topics: Routing::Strong, questions: Routing::Strong, paragraphs: Routing::Mixed, answers: Routing::Mixed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub n_topics: usize,
    pub questions_per_topic: usize,
    pub paragraphs_per_question: usize,
    pub strong_model_share: f64,
    pub model_ids: ModelIds,
    pub seed: u64,
    pub routing: StepRouting,
    /// Requests in flight per stage.
    pub concurrency: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            n_topics: 100,
            questions_per_topic: 25,
            paragraphs_per_question: 3,
            strong_model_share: 0.25,
            model_ids: ModelIds::default(),
            seed: 0,
            routing: StepRouting::default(),
            concurrency: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatagenError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error("{stage} completion yielded nothing usable")]
    EmptyParse { stage: &'static str },
    #[error("empty completion for {id}")]
    EmptyCompletion { id: String },
    #[error("question {id}: {available} sources from other topics, {needed} needed")]
    PoolExhausted { id: String, available: usize, needed: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if !(0.0..=1.0).contains(&self.strong_model_share) {
            return Err(DatagenError::Config(format!("strong_model_share {} outside [0,1]", self.strong_model_share)));
        }
        for (name, v) in [
            ("n_topics", self.n_topics),
            ("questions_per_topic", self.questions_per_topic),
            ("paragraphs_per_question", self.paragraphs_per_question),
            ("concurrency", self.concurrency),
        ] {
            if v == 0 {
                return Err(DatagenError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Picks the model for one request under `routing`.
    pub fn route(&self, routing: Routing, rng: &mut impl Rng) -> &str {
        let strong = match routing {
            Routing::Standard => false,
            Routing::Strong => true,
            Routing::Mixed => rng.random_bool(self.strong_model_share),
        };
        if strong {
            &self.model_ids.strong
        } else {
            &self.model_ids.standard
        }
    }
}

/// Independent RNG for one item of one stage.
pub fn item_rng(seed: u64, stage: &str, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    h.update([0]);
    h.update(key.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

pub fn topics_prompt(n: usize) -> String {
    format!(
        "Create {n} random topics from the scientific areas of finance, sustainability, physics, social sciences and natural sciences. \
Please seperate each topic with '||'. Use no enumeration or additional signs to seperate the topics."
    )
}

pub fn questions_prompt(topic: &str, n: usize) -> String {
    format!(
        "Take the topic {topic} and create {n} questions that could be posed in the field. \
Make the questions diverse and differentiable from each other.\n\n\
End every question with '\\\\'. Use no enumeration or additional signs to seperate the questions."
    )
}

pub fn paragraphs_prompt(topic: &str, question: &str, m: usize) -> String {
    format!(
        "Consider the following question within the topic {topic}: {question}\n\n\
Please create {m} paragraphs with the length of 2-4 sentences that partially address this question. \
The question should not fully be answered by one paragraph but rather helpful content in respect to the question should be displayed. \
Each paragraph should be in the style of a book or research article.\n\n\
Furthermore, the paragraphs can display different perspectives and should not overlap much. \
The paragaphs should also alternate in level of detail and addressed readers, i.e., some paragraphs can be very scientifc while others would rather serve a general public.\n\n\
It is important that the paragraphs stand for themselves. They don't read like one article but excerpts from multiple articles.\n\n\
Please be creative with the beginning of the paragraphs.\n\n\
In the end of each paragraph give author, year and page in the following format '[author, year, page]'. \
Follow this example: '[Mishra et al., 2019, p.54]'.\n\n\
Make up author, year and page, if you don't have this information. Authors can also be institutions.\n\n\
End every paragaph with 'ENDOFPARAGRAPH'. Use no enumeration or additional signs to seperate the paragraphs. \
Also do not give any further information like \"Paragraph 1: ...\"."
    )
}

pub fn parse_topics(completion: &str) -> Result<Vec<String>, DatagenError> {
    let topics: Vec<String> =
        completion.split(TOPIC_SEPARATOR).map(str::trim).filter(|t| !t.is_empty()).map(str::to_string).collect();
    if topics.is_empty() {
        return Err(DatagenError::EmptyParse { stage: "topics" });
    }
    Ok(topics)
}

/// Question texts from a backslash-terminated completion. A doubled
/// backslash counts as one terminator and the unterminated tail is dropped.
pub fn parse_questions(completion: &str) -> Vec<String> {
    let normalized = completion.replace("\\\\", "\\");
    let mut parts: Vec<&str> = normalized.split(QUESTION_TERMINATOR).collect();
    parts.pop();
    parts.into_iter().map(str::trim).filter(|q| !q.is_empty()).map(str::to_string).collect()
}

/// Parsed paragraphs plus the number skipped for lacking a trailing
/// `[author, year, page]` label.
pub fn parse_paragraphs(completion: &str) -> (Vec<Source>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    let mut chunks: Vec<&str> = completion.split(PARAGRAPH_TERMINATOR).collect();
    if chunks.last().is_some_and(|c| c.trim().is_empty()) {
        chunks.pop();
    }
    for chunk in chunks {
        let p = chunk.trim();
        if p.is_empty() {
            continue;
        }
        match split_label(p) {
            Some((content, name)) => out.push(Source::synthesized(name, content, Relevance::Relevant)),
            None => skipped += 1,
        }
    }
    (out, skipped)
}

fn split_label(p: &str) -> Option<(&str, &str)> {
    let body = p.strip_suffix(']')?;
    let open = body.rfind('[')?;
    let name = body[open + 1..].trim();
    let content = body[..open].trim();
    (!name.is_empty() && !content.is_empty()).then_some((content, name))
}

/// A stable id for a question within its topic.
pub fn question_id(topic: &str, text: &str) -> String {
    let mut h = Sha256::new();
    h.update(topic.as_bytes());
    h.update([0]);
    h.update(text.as_bytes());
    hex::encode(&h.finalize()[..8])
}

async fn ask(client: &dyn ChatClient, model: &str, prompt: String) -> Result<String, EndpointError> {
    client.complete(&ChatRequest::user(model, prompt)).await
}

pub async fn generate_topics(config: &GenerationConfig, client: &dyn ChatClient) -> Result<Vec<String>, DatagenError> {
    let mut rng = item_rng(config.seed, "topics", "");
    let model = config.route(config.routing.topics, &mut rng).to_string();
    let mut topics = parse_topics(&ask(client, &model, topics_prompt(config.n_topics)).await?)?;
    let mut seen = HashSet::new();
    topics.retain(|t| seen.insert(t.clone()));
    if topics.len() < config.n_topics {
        log::warn!("topics: {} of {} requested", topics.len(), config.n_topics);
    }
    Ok(topics)
}

pub async fn generate_questions(
    topic: &str,
    config: &GenerationConfig,
    client: &dyn ChatClient,
) -> Result<Vec<Question>, DatagenError> {
    let mut rng = item_rng(config.seed, "questions", topic);
    let model = config.route(config.routing.questions, &mut rng).to_string();
    let texts = parse_questions(&ask(client, &model, questions_prompt(topic, config.questions_per_topic)).await?);
    let mut seen = HashSet::new();
    let questions: Vec<Question> = texts
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .take(config.questions_per_topic)
        .map(|text| Question { id: question_id(topic, &text), topic: topic.to_string(), text })
        .collect();
    if questions.is_empty() {
        return Err(DatagenError::EmptyParse { stage: "questions" });
    }
    if questions.len() < config.questions_per_topic {
        log::warn!("topic {topic:?}: {} of {} questions", questions.len(), config.questions_per_topic);
    }
    Ok(questions)
}

pub async fn generate_paragraphs(
    question: &Question,
    config: &GenerationConfig,
    client: &dyn ChatClient,
) -> Result<Vec<Source>, DatagenError> {
    let mut rng = item_rng(config.seed, "paragraphs", &question.id);
    let model = config.route(config.routing.paragraphs, &mut rng).to_string();
    let prompt = paragraphs_prompt(&question.topic, &question.text, config.paragraphs_per_question);
    let (mut sources, skipped) = parse_paragraphs(&ask(client, &model, prompt).await?);
    sources.truncate(config.paragraphs_per_question);
    if skipped > 0 || sources.len() < config.paragraphs_per_question {
        log::warn!(
            "question {}: {} of {} paragraphs ({skipped} unlabeled)",
            question.id,
            sources.len(),
            config.paragraphs_per_question
        );
    }
    Ok(sources)
}

/// The generated paragraphs of one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSources {
    pub question: Question,
    pub sources: Vec<Source>,
}

/// Draws 0..=3 relevant sources (capped by the pool) and 3..=6 sources
/// from other topics, then shuffles them together.
pub fn assemble_instruction(
    question: &Question,
    relevant_pool: &[Source],
    global_pool: &[(String, Source)],
    rng: &mut impl Rng,
) -> Result<Instruction, DatagenError> {
    let k_rel = rng.random_range(0..=3usize).min(relevant_pool.len());
    let k_irr = rng.random_range(3..=6usize);
    let foreign: Vec<&Source> = global_pool.iter().filter(|(t, _)| *t != question.topic).map(|(_, s)| s).collect();
    if foreign.len() < k_irr {
        return Err(DatagenError::PoolExhausted { id: question.id.clone(), available: foreign.len(), needed: k_irr });
    }
    let mut sources: Vec<Source> = relevant_pool
        .choose_multiple(rng, k_rel)
        .map(|s| s.clone().with_relevance(Relevance::Relevant))
        .collect();
    sources.extend(foreign.choose_multiple(rng, k_irr).map(|s| (*s).clone().with_relevance(Relevance::Irrelevant)));
    sources.shuffle(rng);
    Ok(Instruction::new(question.clone(), sources)?)
}

pub async fn generate_answer(
    instruction: &Instruction,
    config: &GenerationConfig,
    client: &dyn ChatClient,
    rng: &mut impl Rng,
) -> Result<Answer, DatagenError> {
    let model = config.route(config.routing.answers, rng).to_string();
    let text = ask(client, &model, instruction.rendered_prompt.clone()).await?;
    let text = text.trim();
    if text.is_empty() {
        return Err(DatagenError::EmptyCompletion { id: instruction.question.id.clone() });
    }
    Ok(Answer { text: text.to_string(), generator: Some(model) })
}

pub async fn questions_stage(
    topics: &[String],
    config: &GenerationConfig,
    client: &dyn ChatClient,
) -> Result<Vec<Question>, DatagenError> {
    let per_topic: Vec<Vec<Question>> = stream::iter(topics.iter().map(|t| generate_questions(t, config, client)))
        .buffered(config.concurrency)
        .try_collect()
        .await?;
    Ok(per_topic.into_iter().flatten().collect())
}

pub async fn sources_stage(
    questions: &[Question],
    config: &GenerationConfig,
    client: &dyn ChatClient,
) -> Result<Vec<QuestionSources>, DatagenError> {
    stream::iter(questions.iter().map(|q| async move {
        let sources = generate_paragraphs(q, config, client).await?;
        Ok::<_, DatagenError>(QuestionSources { question: q.clone(), sources })
    }))
    .buffered(config.concurrency)
    .try_collect()
    .await
}

/// Builds one unanswered Base record per question.
pub fn instructions_stage(items: &[QuestionSources], config: &GenerationConfig) -> Result<Corpus, DatagenError> {
    let global: Vec<(String, Source)> =
        items.iter().flat_map(|qs| qs.sources.iter().map(|s| (qs.question.topic.clone(), s.clone()))).collect();
    let mut records = Vec::with_capacity(items.len());
    for qs in items {
        let mut rng = item_rng(config.seed, "instructions", &qs.question.id);
        let inst = assemble_instruction(&qs.question, &qs.sources, &global, &mut rng)?;
        records.push(Record::new(inst));
    }
    Ok(Corpus::new(Tier::Base, records))
}

pub async fn answers_stage(
    mut corpus: Corpus,
    config: &GenerationConfig,
    client: &dyn ChatClient,
) -> Result<Corpus, DatagenError> {
    let answers: Vec<Answer> = stream::iter(corpus.records.iter().map(|r| async move {
        let mut rng = item_rng(config.seed, "answers", r.id());
        generate_answer(&r.instruction, config, client, &mut rng).await
    }))
    .buffered(config.concurrency)
    .try_collect()
    .await?;
    for (r, a) in corpus.records.iter_mut().zip(answers) {
        r.answer = Some(a);
    }
    Ok(corpus)
}

pub fn provenance(config: &GenerationConfig) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("generator".into(), "evqa datagen".into()),
        ("seed".into(), config.seed.to_string()),
        ("model.standard".into(), config.model_ids.standard.clone()),
        ("model.strong".into(), config.model_ids.strong.clone()),
        ("strong_model_share".into(), config.strong_model_share.to_string()),
    ])
}

/// All five steps end to end, yielding an answered Base corpus.
pub async fn run_pipeline(config: &GenerationConfig, client: &dyn ChatClient) -> Result<Corpus, DatagenError> {
    config.validate()?;
    let topics = generate_topics(config, client).await?;
    let questions = questions_stage(&topics, config, client).await?;
    let sources = sources_stage(&questions, config, client).await?;
    let corpus = instructions_stage(&sources, config)?;
    let mut corpus = answers_stage(corpus, config, client).await?;
    corpus.manifest.provenance = provenance(config);
    Ok(corpus)
}
