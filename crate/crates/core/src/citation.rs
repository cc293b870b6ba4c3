//! Sentence segmentation, trailing-citation parsing and source matching.

use std::ops::Range;
use std::path::Path;

use crate::model::{Citation, Source};

/// Abbreviations that never end a sentence. Matched case-insensitively
/// against the text immediately preceding a period.
pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "et al.", "al.", "p.", "pp.", "dr.", "prof.", "mr.", "mrs.", "ms.", "st.", "jr.", "sr.", "fig.",
    "figs.", "eq.", "eqs.", "no.", "nos.", "vol.", "ch.", "sec.", "ed.", "eds.", "e.g.", "i.e.",
    "cf.", "vs.", "approx.", "ca.", "inc.", "ltd.", "co.", "corp.", "u.s.", "u.k.", "jan.", "feb.",
    "mar.", "apr.", "aug.", "sep.", "sept.", "oct.", "nov.", "dec.",
];

pub const DEFAULT_TERMINATORS: &[char] = &['.', '!', '?'];

/// Closing quote marks that may trail a terminator and still belong to the
/// sentence.
const CLOSING_QUOTES: &[char] = &['"', '\'', '\u{201d}', '\u{2019}', '\u{bb}'];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SegmentError {
    #[error("answer text is empty")]
    Empty,
}

#[derive(Debug, thiserror::Error)]
pub enum RulesError {
    #[error("line {line}: entry outside of a section")]
    NoSection { line: usize },
    #[error("line {line}: unknown section `{name}`")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: terminator must be a single character, got `{value}`")]
    BadTerminator { line: usize, value: String },
    #[error("no terminators configured")]
    NoTerminators,
    #[error("reading rules file: {0}")]
    Io(#[from] std::io::Error),
}

/// Pinned segmentation behaviour.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationRules {
    abbreviations: Vec<String>,
    terminators: Vec<char>,
}

impl Default for SegmentationRules {
    fn default() -> Self {
        Self::new(DEFAULT_ABBREVIATIONS.iter().copied(), DEFAULT_TERMINATORS.iter().copied())
    }
}

impl SegmentationRules {
    pub fn new<'a>(abbreviations: impl IntoIterator<Item = &'a str>, terminators: impl IntoIterator<Item = char>) -> Self {
        let mut abbreviations: Vec<String> =
            abbreviations.into_iter().map(|a| a.trim().to_lowercase()).filter(|a| !a.is_empty()).collect();
        abbreviations.sort();
        abbreviations.dedup();
        let mut terminators: Vec<char> = terminators.into_iter().collect();
        terminators.sort_unstable();
        terminators.dedup();
        Self { abbreviations, terminators }
    }

    /// Parses the plain-text rules format:
    ///
    /// ```text
    /// [abbreviations]
    /// et al.
    /// p.
    /// [terminators]
    /// .
    /// ?
    /// ```
    ///
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse_config(text: &str) -> Result<Self, RulesError> {
        enum Section {
            None,
            Abbrev,
            Term,
        }
        let mut section = Section::None;
        let mut abbreviations = Vec::new();
        let mut terminators = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') && !line.contains(' ') {
                section = match &line[1..line.len() - 1] {
                    "abbreviations" => Section::Abbrev,
                    "terminators" => Section::Term,
                    other => return Err(RulesError::UnknownSection { line: line_no, name: other.to_string() }),
                };
                continue;
            }
            match section {
                Section::None => return Err(RulesError::NoSection { line: line_no }),
                Section::Abbrev => abbreviations.push(line.to_string()),
                Section::Term => {
                    let mut chars = line.chars();
                    match (chars.next(), chars.next()) {
                        (Some(c), None) => terminators.push(c),
                        _ => return Err(RulesError::BadTerminator { line: line_no, value: line.to_string() }),
                    }
                }
            }
        }
        if terminators.is_empty() {
            return Err(RulesError::NoTerminators);
        }
        Ok(Self::new(abbreviations.iter().map(String::as_str), terminators))
    }

    pub fn from_file(path: &Path) -> Result<Self, RulesError> {
        Self::parse_config(&std::fs::read_to_string(path)?)
    }

    pub fn abbreviations(&self) -> &[String] {
        &self.abbreviations
    }

    pub fn terminators(&self) -> &[char] {
        &self.terminators
    }

    fn is_terminator(&self, c: char) -> bool {
        self.terminators.contains(&c)
    }

    /// True when `prefix` (text up to and including a period) ends with a
    /// listed abbreviation that starts at a word boundary.
    fn ends_with_abbreviation(&self, prefix: &str) -> bool {
        let lower = prefix.to_lowercase();
        self.abbreviations.iter().any(|abbr| {
            lower.ends_with(abbr.as_str())
                && lower[..lower.len() - abbr.len()].chars().next_back().is_none_or(|c| !c.is_alphanumeric())
        })
    }
}

/// For every opening bracket, the index of its matching closer. `()` and
/// `[]` are matched; unmatched brackets get `None`.
fn bracket_pairs(chars: &[char]) -> Vec<Option<usize>> {
    let mut pairs = vec![None; chars.len()];
    let mut stack: Vec<(usize, char)> = Vec::new();
    for (i, &c) in chars.iter().enumerate() {
        match c {
            '(' | '[' => stack.push((i, c)),
            ')' | ']' => {
                let want = if c == ')' { '(' } else { '[' };
                if let Some(pos) = stack.iter().rposition(|&(_, o)| o == want) {
                    let (open, _) = stack[pos];
                    stack.truncate(pos);
                    pairs[open] = Some(i);
                }
            }
            _ => {}
        }
    }
    pairs
}

fn protected_mask(chars: &[char], pairs: &[Option<usize>]) -> Vec<bool> {
    let mut depth_delta = vec![0i32; chars.len() + 1];
    for (open, close) in pairs.iter().enumerate().filter_map(|(o, c)| c.map(|c| (o, c))) {
        depth_delta[open + 1] += 1;
        depth_delta[close] -= 1;
    }
    let mut depth = 0;
    (0..chars.len())
        .map(|i| {
            depth += depth_delta[i];
            depth > 0
        })
        .collect()
}

/// Splits an answer into sentences.
///
/// A terminator ends a sentence when it is outside any matched bracket
/// pair, is followed (after further terminators and closing quotes) by
/// whitespace or the end of text, and is not the period of a listed
/// abbreviation.
pub fn segment_sentences(text: &str, rules: &SegmentationRules) -> Result<Vec<String>, SegmentError> {
    if text.trim().is_empty() {
        return Err(SegmentError::Empty);
    }
    let chars: Vec<char> = text.chars().collect();
    let pairs = bracket_pairs(&chars);
    let protected = protected_mask(&chars, &pairs);

    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if !rules.is_terminator(c) || protected[i] {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() && rules.is_terminator(chars[j]) && !protected[j] {
            j += 1;
        }
        while j < chars.len() && CLOSING_QUOTES.contains(&chars[j]) {
            j += 1;
        }
        let boundary = j == chars.len() || chars[j].is_whitespace();
        let abbreviation = c == '.' && j == i + 1 && {
            let prefix: String = chars[start..=i].iter().collect();
            rules.ends_with_abbreviation(&prefix)
        };
        if boundary && !abbreviation {
            push_trimmed(&mut out, &chars[start..j]);
            start = j;
        }
        i = j;
    }
    push_trimmed(&mut out, &chars[start..]);
    Ok(out)
}

fn push_trimmed(out: &mut Vec<String>, chars: &[char]) {
    let s: String = chars.iter().collect();
    let t = s.trim();
    if !t.is_empty() {
        out.push(t.to_string());
    }
}

/// Byte offsets of top-level commas within `s`.
fn top_level_commas(s: &str) -> Vec<usize> {
    let mut depth = 0i32;
    let mut out = Vec::new();
    for (i, c) in s.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            ',' if depth == 0 => out.push(i),
            _ => {}
        }
    }
    out
}

fn is_citation_shaped(interior: &str) -> bool {
    top_level_commas(interior).len() >= 2
}

fn char_to_byte(s: &str) -> Vec<usize> {
    let mut v: Vec<usize> = s.char_indices().map(|(b, _)| b).collect();
    v.push(s.len());
    v
}

/// A citation at the end of a sentence, with its byte range.
fn tail_citation(sentence: &str) -> Option<(Citation, Range<usize>)> {
    let body = sentence
        .trim_end()
        .trim_end_matches(|c: char| DEFAULT_TERMINATORS.contains(&c) || CLOSING_QUOTES.contains(&c))
        .trim_end();
    let chars: Vec<char> = body.chars().collect();
    let last = *chars.last()?;
    if last != ')' && last != ']' {
        return None;
    }
    let pairs = bracket_pairs(&chars);
    let close = chars.len() - 1;
    let open = pairs.iter().position(|p| *p == Some(close))?;
    let offsets = char_to_byte(body);
    let span = offsets[open]..offsets[close + 1];
    let raw = &body[span.clone()];
    let interior = &raw[1..raw.len() - 1];
    let commas = top_level_commas(interior);
    if commas.len() < 2 {
        return None;
    }
    let second_last = commas[commas.len() - 2];
    let last_comma = commas[commas.len() - 1];
    let author = interior[..second_last].trim();
    let year = interior[second_last + 1..last_comma].trim();
    let page = interior[last_comma + 1..].trim();
    if author.is_empty() || year.is_empty() || page.is_empty() {
        return None;
    }
    let citation = Citation {
        raw: raw.to_string(),
        author: author.to_string(),
        year: year.to_string(),
        page: page.to_string(),
        matched_source: None,
    };
    Some((citation, span))
}

/// Parses the bracketed `(author, year, page)` tail of a sentence. The
/// square-bracket form used in source labels is accepted too. Authors may
/// themselves contain commas; year and page are the last two fields.
pub fn parse_citation(sentence: &str) -> Option<Citation> {
    tail_citation(sentence).map(|(c, _)| c)
}

/// The sentence with its tail citation removed, keeping the terminator.
pub fn claim_text(sentence: &str) -> String {
    match tail_citation(sentence) {
        Some((_, span)) => {
            let before = sentence[..span.start].trim_end();
            let after = sentence[span.end..].trim();
            format!("{before}{after}")
        }
        None => sentence.trim().to_string(),
    }
}

/// Every non-overlapping citation-shaped span, outermost first.
fn citation_spans(sentence: &str) -> Vec<Range<usize>> {
    let chars: Vec<char> = sentence.chars().collect();
    let pairs = bracket_pairs(&chars);
    let offsets = char_to_byte(sentence);
    let mut out = Vec::new();
    let mut stack = vec![(0usize, chars.len())];
    let mut collected = Vec::new();
    while let Some((lo, hi)) = stack.pop() {
        let mut i = lo;
        while i < hi {
            match pairs[i] {
                Some(close) if close < hi => {
                    let interior = &sentence[offsets[i + 1]..offsets[close]];
                    if is_citation_shaped(interior) {
                        collected.push(offsets[i]..offsets[close + 1]);
                    } else {
                        stack.push((i + 1, close));
                    }
                    i = close + 1;
                }
                _ => i += 1,
            }
        }
    }
    collected.sort_by_key(|r| r.start);
    out.extend(collected);
    out
}

/// Number of non-overlapping citation-shaped spans (bracketed text with at
/// least two top-level commas) in a sentence.
pub fn count_citations(sentence: &str) -> usize {
    citation_spans(sentence).len()
}

/// Every citation-shaped span in the sentence, parsed.
pub fn all_citations(sentence: &str) -> Vec<Citation> {
    citation_spans(sentence).into_iter().filter_map(|r| parse_citation(&sentence[r])).collect()
}

fn strip_outer_brackets(s: &str) -> &str {
    let t = s.trim();
    let bytes = t.as_bytes();
    if t.len() >= 2
        && ((bytes[0] == b'(' && bytes[t.len() - 1] == b')') || (bytes[0] == b'[' && bytes[t.len() - 1] == b']'))
    {
        &t[1..t.len() - 1]
    } else {
        t
    }
}

fn fold_case_space(s: &str) -> String {
    strip_outer_brackets(s).split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn fold_punctuation(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace() && !matches!(c, '.' | ',' | '(' | ')' | '[' | ']'))
        .flat_map(char::to_lowercase)
        .collect()
}

/// Resolves a citation to a source name, trying exact, then case- and
/// whitespace-folded, then punctuation- and bracket-folded comparison.
/// The first rung with exactly one candidate wins; an ambiguous rung or no
/// candidate on any rung yields `None`.
pub fn match_source(citation: &Citation, sources: &[Source]) -> Option<String> {
    let key = citation.interior();
    let rungs: [&dyn Fn(&str) -> String; 3] =
        [&|s: &str| strip_outer_brackets(s).to_string(), &fold_case_space, &fold_punctuation];
    for norm in rungs {
        let want = norm(key);
        let mut hits = sources.iter().filter(|s| norm(&s.name) == want);
        match (hits.next(), hits.next()) {
            (Some(s), None) => return Some(s.name.clone()),
            (Some(_), Some(_)) => return None,
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Relevance;

    fn seg(text: &str) -> Vec<String> {
        segment_sentences(text, &SegmentationRules::default()).unwrap()
    }

    #[test]
    fn splits_two_cited_sentences() {
        assert_eq!(seg("A is B (X, 2020, p.1). C is D (Y, 2021, p.2)."), ["A is B (X, 2020, p.1).", "C is D (Y, 2021, p.2)."]);
    }

    #[test]
    fn et_al_and_page_do_not_split() {
        let text = "Drift changes allele frequency (Morse et al., 2018, p. 67). Additionally, selection acts.";
        assert_eq!(seg(text), ["Drift changes allele frequency (Morse et al., 2018, p. 67).", "Additionally, selection acts."]);
        assert_eq!(seg("As Morse et al. argue, drift is random. See p. 4 for more."), [
            "As Morse et al. argue, drift is random.",
            "See p. 4 for more."
        ]);
    }

    #[test]
    fn single_sentence_without_citation() {
        assert_eq!(seg("No answer can be given."), ["No answer can be given."]);
    }

    #[test]
    fn quote_after_terminator_stays_with_sentence() {
        assert_eq!(seg("It asks \"Why?\" Then it stops."), ["It asks \"Why?\"", "Then it stops."]);
    }

    #[test]
    fn decimals_and_ordinal_abbrev() {
        assert_eq!(seg("The world No.1 retired at 3.5 years. Done."), ["The world No.1 retired at 3.5 years.", "Done."]);
    }

    #[test]
    fn whitespace_only_is_error() {
        assert!(matches!(segment_sentences(" \n\t", &SegmentationRules::default()), Err(SegmentError::Empty)));
    }

    #[test]
    fn unmatched_paren_does_not_swallow_text() {
        assert_eq!(seg("Open (see below. Next one."), ["Open (see below.", "Next one."]);
    }

    #[test]
    fn trailing_citation_after_period_is_own_fragment() {
        let out = seg("Swiatek rose to the top spot. (Williams, 2022, p.8)");
        assert_eq!(out, ["Swiatek rose to the top spot.", "(Williams, 2022, p.8)"]);
    }

    #[test]
    fn parse_table_examples() {
        let c = parse_citation("The top-ranked player is Iga Swiatek (Online2602022, 2019, p.8).").unwrap();
        assert_eq!((c.author.as_str(), c.year.as_str(), c.page.as_str()), ("Online2602022", "2019", "p.8"));
        assert_eq!(c.raw, "(Online2602022, 2019, p.8)");

        let c = parse_citation("[Mishra et al., 2019, p.54]").unwrap();
        assert_eq!((c.author.as_str(), c.year.as_str(), c.page.as_str()), ("Mishra et al.", "2019", "p.54"));
        assert_eq!(c.raw, "[Mishra et al., 2019, p.54]");

        assert!(parse_citation("The sky is blue.").is_none());
        assert!(parse_citation("It is mentioned (see below).").is_none());
    }

    #[test]
    fn author_with_commas() {
        let c = parse_citation("X (Smith, J., 2020, p.3).").unwrap();
        assert_eq!(c.author, "Smith, J.");
        assert_eq!(c.year, "2020");
        assert_eq!(c.page, "p.3");
    }

    #[test]
    fn multi_citation_parses_tail_and_counts_both() {
        let s = "The claim holds (A, 2020, p.1) and (B, 2021, p.2).";
        assert_eq!(parse_citation(s).unwrap().author, "B");
        assert_eq!(count_citations(s), 2);
        assert_eq!(count_citations("X (A, 2020, p.1)."), 1);
        assert_eq!(count_citations("It is mentioned (see below)."), 0);
        let all = all_citations(s);
        assert_eq!(all.iter().map(|c| c.author.as_str()).collect::<Vec<_>>(), ["A", "B"]);
    }

    #[test]
    fn nested_non_citation_parens_are_searched() {
        assert_eq!(count_citations("Text (note (A, 2020, p.1) inside)."), 1);
        assert!(parse_citation("Text (note (A, 2020, p.1)).").is_none());
    }

    #[test]
    fn claim_strips_citation() {
        assert_eq!(claim_text("Iga Swiatek leads (Online2602022, 2019, p.8)."), "Iga Swiatek leads.");
        assert_eq!(claim_text("(Williams, 2022, p.8)"), "");
        assert_eq!(claim_text("No citation here."), "No citation here.");
    }

    fn sources() -> Vec<Source> {
        vec![
            Source::synthesized("Mishra et al., 2019, p.54", "a", Relevance::Relevant),
            Source::synthesized("Morse et al., 2018, p.67", "b", Relevance::Irrelevant),
        ]
    }

    #[test]
    fn match_ladder() {
        let exact = parse_citation("x (Mishra et al., 2019, p.54).").unwrap();
        assert_eq!(match_source(&exact, &sources()).as_deref(), Some("Mishra et al., 2019, p.54"));
        let folded = parse_citation("x (mishra  et al., 2019, P.54).").unwrap();
        assert_eq!(match_source(&folded, &sources()).as_deref(), Some("Mishra et al., 2019, p.54"));
        let spaced = parse_citation("x (Morse et al., 2018, p. 67).").unwrap();
        assert_eq!(match_source(&spaced, &sources()).as_deref(), Some("Morse et al., 2018, p.67"));
        let missing = parse_citation("x (Hudsonsonian Institution, 2017, p. 28).").unwrap();
        assert_eq!(match_source(&missing, &sources()), None);
    }

    #[test]
    fn ambiguous_rung_yields_none() {
        let srcs = vec![
            Source::imported("Lee, 2020, p.1", "a"),
            Source::imported("lee, 2020, p.1", "b"),
        ];
        let c = parse_citation("x (LEE, 2020, p.1).").unwrap();
        assert_eq!(match_source(&c, &srcs), None);
        let exact = parse_citation("x (lee, 2020, p.1).").unwrap();
        assert_eq!(match_source(&exact, &srcs).as_deref(), Some("lee, 2020, p.1"));
    }

    #[test]
    fn bracketed_source_name_matches_paren_citation() {
        let srcs = vec![Source::imported("[Mishra et al., 2019, p.54]", "a")];
        let c = parse_citation("x (Mishra et al., 2019, p.54).").unwrap();
        assert_eq!(match_source(&c, &srcs).as_deref(), Some("[Mishra et al., 2019, p.54]"));
    }

    #[test]
    fn rules_config_roundtrip() {
        let text = "# custom\n[abbreviations]\nEt Al.\nFIG.\n\n[terminators]\n.\n?\n";
        let rules = SegmentationRules::parse_config(text).unwrap();
        assert_eq!(rules.abbreviations(), ["et al.", "fig."]);
        assert_eq!(rules.terminators(), ['.', '?']);
        let out = segment_sentences("See Fig. 2 now! Really? Yes.", &rules).unwrap();
        assert_eq!(out, ["See Fig. 2 now! Really?", "Yes."]);
    }

    #[test]
    fn rules_config_errors() {
        assert!(matches!(SegmentationRules::parse_config("p.\n"), Err(RulesError::NoSection { line: 1 })));
        assert!(matches!(SegmentationRules::parse_config("[foo]\n"), Err(RulesError::UnknownSection { .. })));
        assert!(matches!(SegmentationRules::parse_config("[terminators]\n..\n"), Err(RulesError::BadTerminator { .. })));
        assert!(matches!(SegmentationRules::parse_config("[abbreviations]\np.\n"), Err(RulesError::NoTerminators)));
    }
}
