//! `key=value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use evqa_pipeline::datagen::{GenerationConfig, Routing};
use url::Url;

pub const KEYS: &[&str] = &[
    "chat.endpoint",
    "chat.timeout_ms",
    "chat.retry_budget",
    "model.standard",
    "model.strong",
    "n_topics",
    "questions_per_topic",
    "paragraphs_per_question",
    "strong_model_share",
    "routing.topics",
    "routing.questions",
    "routing.paragraphs",
    "routing.answers",
    "nli.endpoint",
    "nli.model",
    "nli.timeout_ms",
    "nli.retry_budget",
    "judge.endpoint",
    "judge.model",
    "segmentation_rules",
];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("`{key}`: {message}")]
    Value { key: String, message: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(ConfigError::UnknownKey { line: i + 1, key: k.into() });
            }
            values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| ConfigError::Value { key: key.into(), message: e.to_string() }))
            .transpose()
    }

    pub fn url(&self, key: &str) -> Result<Option<Url>, ConfigError> {
        self.parsed(key)
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    fn routing(&self, key: &str) -> Result<Option<Routing>, ConfigError> {
        self.get(key)
            .map(|v| match v {
                "standard" => Ok(Routing::Standard),
                "strong" => Ok(Routing::Strong),
                "mixed" => Ok(Routing::Mixed),
                other => Err(ConfigError::Value { key: key.into(), message: format!("unknown routing `{other}`") }),
            })
            .transpose()
    }

    pub fn generation(&self, seed: u64, concurrency: usize) -> Result<GenerationConfig, ConfigError> {
        let mut g = GenerationConfig { seed, concurrency, ..GenerationConfig::default() };
        if let Some(v) = self.parsed("n_topics")? {
            g.n_topics = v;
        }
        if let Some(v) = self.parsed("questions_per_topic")? {
            g.questions_per_topic = v;
        }
        if let Some(v) = self.parsed("paragraphs_per_question")? {
            g.paragraphs_per_question = v;
        }
        if let Some(v) = self.parsed("strong_model_share")? {
            g.strong_model_share = v;
        }
        if let Some(v) = self.get("model.standard") {
            g.model_ids.standard = v.into();
        }
        if let Some(v) = self.get("model.strong") {
            g.model_ids.strong = v.into();
        }
        for (key, slot) in [
            ("routing.topics", &mut g.routing.topics),
            ("routing.questions", &mut g.routing.questions),
            ("routing.paragraphs", &mut g.routing.paragraphs),
            ("routing.answers", &mut g.routing.answers),
        ] {
            if let Some(r) = self.routing(key)? {
                *slot = r;
            }
        }
        g.validate().map_err(|e| ConfigError::Value { key: "generation".into(), message: e.to_string() })?;
        Ok(g)
    }
}
