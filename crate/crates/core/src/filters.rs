//! Tiering filters: source quality (plus) and full attributability
//! (plusplus). Filters only change membership, never record contents.

use crate::model::{Corpus, Manifest, Record, Relevance, SourceQuality, Tier};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FilterError {
    #[error("record `{id}` is not scored")]
    Unscored { id: String },
    #[error("record `{id}` has unlabeled sources; source quality is not applicable")]
    UnlabeledSources { id: String },
    #[error("{filter} filter cannot take a {tier} corpus")]
    WrongTier { filter: &'static str, tier: Tier },
}

fn derived(input: &Corpus, tier: Tier, records: Vec<Record>, stage: &str) -> Corpus {
    let mut provenance = input.manifest.provenance.clone();
    provenance.insert("filter".into(), stage.into());
    let manifest = Manifest {
        tier,
        records: records.len(),
        input_records: Some(input.records.len()),
        retained_refusals: None,
        provenance,
    };
    Corpus { tier, manifest, records }
}

/// Keeps records whose source quality is exactly one.
pub fn filter_source_quality(corpus: &Corpus) -> Result<Corpus, FilterError> {
    if corpus.tier == Tier::External {
        return Err(FilterError::WrongTier { filter: "source-quality", tier: corpus.tier });
    }
    let mut kept = Vec::new();
    for r in &corpus.records {
        if r.instruction.sources.iter().any(|s| s.relevance == Relevance::Unknown) {
            return Err(FilterError::UnlabeledSources { id: r.id().to_string() });
        }
        let scores = r.scores.as_ref().ok_or_else(|| FilterError::Unscored { id: r.id().to_string() })?;
        if scores.source_quality == Some(SourceQuality::One) {
            kept.push(r.clone());
        }
    }
    Ok(derived(corpus, corpus.tier.max(Tier::Plus), kept, "source-quality"))
}

/// Keeps records with attributability exactly one, plus refusal records
/// (nothing relevant offered, nothing cited, source quality one), which
/// are counted in the manifest.
pub fn filter_attributability(corpus: &Corpus) -> Result<Corpus, FilterError> {
    if !matches!(corpus.tier, Tier::Plus | Tier::PlusPlus) {
        return Err(FilterError::WrongTier { filter: "attributability", tier: corpus.tier });
    }
    let mut kept = Vec::new();
    let mut refusals = 0;
    for r in &corpus.records {
        let scores = r.scores.as_ref().ok_or_else(|| FilterError::Unscored { id: r.id().to_string() })?;
        if scores.attributability.is_some_and(|a| a.is_one()) {
            kept.push(r.clone());
        } else if scores.attributability.is_none()
            && r.instruction.count(Relevance::Relevant) == 0
            && r.is_refusal()
        {
            refusals += 1;
            kept.push(r.clone());
        }
    }
    let mut out = derived(corpus, Tier::PlusPlus, kept, "attributability");
    out.manifest.retained_refusals = Some(refusals);
    Ok(out)
}
