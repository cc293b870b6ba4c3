//! Collecting per-run scores for `stats compare` and `stats correlate`.

use std::path::Path;

use evqa_core::scoring::{corpus_scores, Metric};
use evqa_core::stats::RunScores;
use evqa_core::{Corpus, SourceQuality};

pub const METRICS: [Metric; 4] =
    [Metric::SourceQuality, Metric::Attributability, Metric::AttributabilityEntailOnly, Metric::FormatRate];

#[derive(Debug, thiserror::Error)]
pub enum RunsError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} line {line}: {message}")]
    Malformed { path: String, line: usize, message: String },
    #[error("corpus argument `{0}` is not SETTING=TESTSET=PATH")]
    CorpusArg(String),
}

/// Reads `setting<TAB>testset<TAB>metric<TAB>value` rows. A first line
/// starting with `setting` is a header.
pub fn read_runs_tsv(path: &Path, into: &mut RunScores) -> Result<(), RunsError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| RunsError::Io { path: name.clone(), source })?;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line.starts_with("setting")) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let malformed = |message: String| RunsError::Malformed { path: name.clone(), line: i + 1, message };
        let [setting, testset, metric, value] = cols[..] else {
            return Err(malformed(format!("expected 4 columns, got {}", cols.len())));
        };
        let value: f64 = value.trim().parse().map_err(|e| malformed(format!("value: {e}")))?;
        push(into, setting.trim(), testset.trim(), metric.trim(), value);
    }
    Ok(())
}

fn push(runs: &mut RunScores, setting: &str, testset: &str, metric: &str, value: f64) {
    runs.entry(setting.into()).or_default().entry(testset.into()).or_default().entry(metric.into()).or_default().push(value);
}

pub fn parse_corpus_arg(arg: &str) -> Result<(String, String, String), RunsError> {
    let mut parts = arg.splitn(3, '=');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(s), Some(t), Some(p)) if !s.is_empty() && !t.is_empty() && !p.is_empty() => Ok((s.into(), t.into(), p.into())),
        _ => Err(RunsError::CorpusArg(arg.into())),
    }
}

/// Adds a scored corpus as runs. With `per_record`, every applicable
/// record contributes one value per metric; otherwise the corpus means do.
pub fn add_corpus(runs: &mut RunScores, setting: &str, testset: &str, corpus: &Corpus, per_record: bool) -> Result<(), String> {
    if per_record {
        for r in &corpus.records {
            let s = r.scores.as_ref().ok_or_else(|| format!("record `{}` is not scored", r.id()))?;
            let values = [
                s.source_quality.map(SourceQuality::as_ratio),
                s.attributability,
                s.attributability_entail_only,
                Some(s.format_rate),
            ];
            for (m, v) in METRICS.iter().zip(values) {
                if let Some(v) = v {
                    push(runs, setting, testset, &m.to_string(), 100.0 * v.value());
                }
            }
        }
    } else {
        let scores = corpus_scores(corpus).map_err(|e| e.to_string())?;
        for m in METRICS {
            if let Ok(v) = scores.get(m) {
                push(runs, setting, testset, &m.to_string(), v);
            }
        }
    }
    Ok(())
}
