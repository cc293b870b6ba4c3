use std::collections::{BTreeSet, HashSet};

use evqa_core::filters::{filter_attributability, filter_source_quality};
use evqa_core::scoring::{analyze_answer, attributability, attributability_entail_only, format_rate, score_sentences, source_quality};
use evqa_core::storage::{corpus_to_string, parse_corpus};
use evqa_core::validate::validate_corpus;
use evqa_core::{Answer, Citation, Corpus, Instruction, Question, Ratio, Record, Relevance, SegmentationRules, SentenceVerdict, Source, SourceQuality, Tier};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Literal source-quality formula over bitmasks: one iff something is cited
/// and every cited index is relevant, or nothing is cited and there is no
/// relevant source.
fn sq_oracle(n_rel: usize, cited_mask: u32) -> u8 {
    let rel_mask = (1u32 << n_rel) - 1;
    let cited_subset_of_rel = cited_mask & !rel_mask == 0;
    u8::from((cited_mask != 0 && cited_subset_of_rel) || (cited_mask == 0 && n_rel == 0))
}

#[test]
fn source_quality_truth_table() {
    let mut rows = 0;
    for n_rel in 0..=3 {
        for n_irr in 3..=6 {
            let mut sources: Vec<Source> =
                (0..n_rel).map(|i| Source::synthesized(format!("r{i}"), "c", Relevance::Relevant)).collect();
            sources.extend((0..n_irr).map(|i| Source::synthesized(format!("i{i}"), "c", Relevance::Irrelevant)));
            for mask in 0u32..(1 << (n_rel + n_irr)) {
                let cited: BTreeSet<String> =
                    sources.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, s)| s.name.clone()).collect();
                let got = source_quality(&cited, &sources).unwrap().unwrap().as_u8();
                assert_eq!(got, sq_oracle(n_rel, mask), "rel={n_rel} irr={n_irr} mask={mask:b}");
                rows += 1;
            }
        }
    }
    assert_eq!(rows, (0..=3).map(|r| (3..=6).map(|i| 1usize << (r + i)).sum::<usize>()).sum::<usize>());
}

#[test]
fn unknown_relevance_is_not_applicable() {
    let sources = vec![Source::imported("a", "c"), Source::synthesized("b", "c", Relevance::Relevant)];
    assert_eq!(source_quality(&BTreeSet::from(["b".to_string()]), &sources).unwrap(), None);
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Entailed,
    Unentailed,
    BadFormat,
    Uncited,
}

fn verdict(kind: Kind) -> SentenceVerdict {
    let citation = Some(Citation {
        raw: "(A, 2020, p.1)".into(),
        author: "A".into(),
        year: "2020".into(),
        page: "p.1".into(),
        matched_source: Some("A, 2020, p.1".into()),
    });
    let base = SentenceVerdict { text: "x".into(), citation, citation_spans: 1, format_ok: true, entailed: None };
    match kind {
        Kind::Entailed => SentenceVerdict { entailed: Some(true), ..base },
        Kind::Unentailed => SentenceVerdict { entailed: Some(false), ..base },
        Kind::BadFormat => SentenceVerdict { citation_spans: 2, format_ok: false, ..base },
        Kind::Uncited => SentenceVerdict { citation: None, citation_spans: 0, format_ok: false, ..base },
    }
}

fn kind() -> impl Strategy<Value = Kind> {
    prop_oneof![Just(Kind::Entailed), Just(Kind::Unentailed), Just(Kind::BadFormat), Just(Kind::Uncited)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn attributability_identities(kinds in prop::collection::vec(kind(), 1..20)) {
        let v: Vec<SentenceVerdict> = kinds.iter().map(|k| verdict(*k)).collect();
        let total = v.len() as f64;
        let en = kinds.iter().filter(|k| matches!(k, Kind::Entailed)).count() as f64;
        let un = kinds.iter().filter(|k| matches!(k, Kind::Unentailed)).count() as f64;
        let any_cited = kinds.iter().any(|k| !matches!(k, Kind::Uncited));
        match attributability(&v).unwrap() {
            None => prop_assert!(!any_cited),
            Some(a) => {
                prop_assert!(any_cited);
                prop_assert!((a.value() - en / total).abs() <= 1e-12);
                prop_assert!((a.value() - (1.0 - (total - en) / total)).abs() <= 1e-12);
                if let Some(e) = attributability_entail_only(&v).unwrap() {
                    prop_assert!(e.cmp_value(a).is_ge());
                    prop_assert!((e.value() - en / (en + un)).abs() <= 1e-12);
                }
            }
        }
        prop_assert!((format_rate(&v).unwrap().value() - (en + un) / total).abs() <= 1e-12);
    }
}

/// Deterministic scored record with a mix of faithful, unfaithful,
/// misformatted and refusal answers.
fn synthetic_record(rng: &mut ChaCha8Rng, i: usize) -> Record {
    let n_rel = rng.random_range(0..=3);
    let n_irr = rng.random_range(3..=6);
    let mut sources: Vec<Source> = (0..n_rel)
        .map(|k| Source::synthesized(format!("Rel{i}x{k}, 2020, p.{k}"), "relevant content", Relevance::Relevant))
        .collect();
    sources.extend(
        (0..n_irr).map(|k| Source::synthesized(format!("Irr{i}x{k}, 2011, p.{k}"), "other content", Relevance::Irrelevant)),
    );
    let mut parts = Vec::new();
    for _ in 0..rng.random_range(1..=4) {
        let roll = rng.random_range(0..10);
        let pick = &sources[rng.random_range(0..sources.len())].name;
        parts.push(match roll {
            0 => "A claim stands alone.".to_string(),
            1 => format!("Two at once ({pick}) ({}).", sources[0].name),
            _ => format!("Claim number {roll} holds ({pick})."),
        });
    }
    if n_rel == 0 && rng.random_bool(0.4) {
        parts = vec!["No answer can be given from these sources.".into()];
    }
    let text = parts.join(" ");
    let q = Question { id: format!("rec{i:05}"), topic: "t".into(), text: "Q?".into() };
    let inst = Instruction::new(q, sources).unwrap();
    let mut sentences = analyze_answer(&text, &inst.sources, &SegmentationRules::default()).unwrap();
    for s in sentences.iter_mut().filter(|s| s.format_ok) {
        s.entailed = Some(rng.random_bool(0.8));
    }
    let scores = score_sentences(sentences, &inst.sources).unwrap();
    let mut r = Record::new(inst);
    r.answer = Some(Answer { text, generator: Some("m".into()) });
    r.scores = Some(scores);
    r
}

fn synthetic_corpus(seed: u64, n: usize) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Corpus::new(Tier::Base, (0..n).map(|i| synthetic_record(&mut rng, i)).collect())
}

fn ids(c: &Corpus) -> HashSet<String> {
    c.ids().map(str::to_string).collect()
}

#[test]
fn filters_nest_and_are_idempotent() {
    let base = synthetic_corpus(11, 2000);
    assert!(validate_corpus(&base).is_empty());
    let plus = filter_source_quality(&base).unwrap();
    let pp = filter_attributability(&plus).unwrap();
    assert!(ids(&pp).is_subset(&ids(&plus)) && ids(&plus).is_subset(&ids(&base)));
    assert!(!pp.records.is_empty() && pp.records.len() < plus.records.len() && plus.records.len() < base.records.len());
    assert_eq!(filter_source_quality(&plus).unwrap().records, plus.records);
    assert_eq!(filter_attributability(&pp).unwrap().records, pp.records);
    assert!(plus.records.iter().all(|r| r.scores.as_ref().unwrap().source_quality == Some(SourceQuality::One)));
    assert!(pp
        .records
        .iter()
        .all(|r| r.scores.as_ref().unwrap().attributability.is_some_and(Ratio::is_one) || r.is_refusal()));
    assert_eq!(pp.manifest.retained_refusals, Some(pp.records.iter().filter(|r| r.is_refusal()).count()));
    assert!(validate_corpus(&pp).is_empty());
}

#[test]
fn attributability_filter_needs_plus_input() {
    assert!(filter_attributability(&synthetic_corpus(1, 5)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn storage_round_trip_is_byte_stable(seed in any::<u64>(), n in 0usize..12) {
        let corpus = filter_source_quality(&synthetic_corpus(seed, n)).unwrap();
        let first = corpus_to_string(&corpus);
        let back = parse_corpus(&first).unwrap();
        prop_assert_eq!(&back, &corpus);
        prop_assert_eq!(corpus_to_string(&back), first);
    }
}
