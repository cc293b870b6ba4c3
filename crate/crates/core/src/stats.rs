//! Mann-Whitney U, Fisher's method and Pearson correlation, plus the
//! per-setting comparison table built from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

/// Pooled sample sizes up to this use exact enumeration.
pub const EXACT_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("sample is empty")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("p-value {0} outside (0, 1]")]
    PValueDomain(f64),
    #[error("no p-values to combine")]
    NoPValues,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 paired values, got {0}")]
    TooFewPairs(usize),
    #[error("zero variance")]
    ZeroVariance,
    #[error("unknown setting `{0}`")]
    MissingSetting(String),
    #[error("setting `{setting}` has no scores for test set `{testset}` metric `{metric}`")]
    MissingCell { setting: String, testset: String, metric: String },
    #[error("setting `{setting}` has {n} scores for `{testset}`/`{metric}`; at least 2 required")]
    TooFewScores { setting: String, testset: String, metric: String, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    TwoSided,
    /// The first sample tends to be smaller.
    Less,
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p: f64,
    pub exact: bool,
}

fn check_sample(xs: &[f64]) -> Result<(), StatsError> {
    if xs.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// Midranks of the pooled sample, doubled so ties stay integral.
fn doubled_ranks(pooled: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        // positions i..=j are 1-based ranks i+1..=j+1; midrank*2 = i+j+2
        let doubled = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

fn tie_groups(pooled: &[f64]) -> Vec<usize> {
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        groups.push(j - i);
        i = j;
    }
    groups
}

/// Visits every size-`k` subset sum of `values`, calling `f` with the sum.
fn for_each_subset_sum(values: &[u64], k: usize, f: &mut impl FnMut(u64)) {
    fn go(values: &[u64], start: usize, k: usize, acc: u64, f: &mut impl FnMut(u64)) {
        if k == 0 {
            f(acc);
            return;
        }
        for i in start..=values.len() - k {
            go(values, i + 1, k - 1, acc + values[i], f);
        }
    }
    go(values, 0, k, 0, f);
}

fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Mann-Whitney U test with midranks for ties. Exact (conditional on the
/// observed ties) when the pooled size is at most [`EXACT_LIMIT`],
/// otherwise normal approximation with tie and continuity correction.
pub fn mann_whitney_u(xs: &[f64], ys: &[f64], alternative: Alternative) -> Result<MannWhitney, StatsError> {
    check_sample(xs)?;
    check_sample(ys)?;
    let (n1, n2) = (xs.len(), ys.len());
    let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let ranks = doubled_ranks(&pooled);
    // 2*U1 = 2*R1 - n1(n1+1)
    let offset = (n1 * (n1 + 1)) as u64;
    let r1: u64 = ranks[..n1].iter().sum();
    let u2x = r1 - offset;
    let u = u2x as f64 / 2.0;

    if n1 + n2 <= EXACT_LIMIT {
        let (mut total, mut le, mut ge) = (0u64, 0u64, 0u64);
        for_each_subset_sum(&ranks, n1, &mut |sum| {
            let s = sum - offset;
            total += 1;
            le += u64::from(s <= u2x);
            ge += u64::from(s >= u2x);
        });
        let p_less = le as f64 / total as f64;
        let p_greater = ge as f64 / total as f64;
        let p = match alternative {
            Alternative::Less => p_less,
            Alternative::Greater => p_greater,
            Alternative::TwoSided => (2.0 * p_less.min(p_greater)).min(1.0),
        };
        return Ok(MannWhitney { u, p, exact: true });
    }

    let (a, b) = (n1 as f64, n2 as f64);
    let n = a + b;
    let tie_term: f64 = tie_groups(&pooled).iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let sigma = (a * b / 12.0 * ((n + 1.0) - tie_term)).sqrt();
    let mu = a * b / 2.0;
    if sigma == 0.0 {
        return Ok(MannWhitney { u, p: 1.0, exact: false });
    }
    let p = match alternative {
        Alternative::Greater => normal_sf((u - mu - 0.5) / sigma),
        Alternative::Less => normal_sf((mu - u - 0.5) / sigma),
        Alternative::TwoSided => {
            let hi = u.max(a * b - u);
            (2.0 * normal_sf((hi - mu - 0.5) / sigma)).min(1.0)
        }
    };
    Ok(MannWhitney { u, p, exact: false })
}

/// Fisher's method: survival of chi-square with `2k` degrees of freedom at
/// `-2 Σ ln p`, via the even-dof closed form.
pub fn fisher_combine(pvals: &[f64]) -> Result<f64, StatsError> {
    if pvals.is_empty() {
        return Err(StatsError::NoPValues);
    }
    if let Some(&bad) = pvals.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(StatsError::PValueDomain(bad));
    }
    let half_x: f64 = -pvals.iter().map(|p| p.ln()).sum::<f64>();
    let mut term = 1.0;
    let mut series = 1.0;
    for j in 1..pvals.len() {
        term *= half_x / j as f64;
        series += term;
    }
    Ok(((-half_x).exp() * series).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pearson {
    pub r: f64,
    /// Two-sided p-value from Student's t with `n - 2` degrees of freedom.
    pub p: f64,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Pearson, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(StatsError::TooFewPairs(xs.len()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let dof = n - 2.0;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (dof / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, dof).expect("positive dof");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(Pearson { r, p })
}

/// Per-epoch scores: setting → test set → metric → scores.
pub type RunScores = BTreeMap<String, BTreeMap<String, BTreeMap<String, Vec<f64>>>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub alternative: Alternative,
}

impl Comparison {
    /// Parses `A<B`, `A>B` or `A!=B`.
    pub fn parse(s: &str) -> Option<Self> {
        let (a, b, alternative) = if let Some((a, b)) = s.split_once("!=") {
            (a, b, Alternative::TwoSided)
        } else if let Some((a, b)) = s.split_once('<') {
            (a, b, Alternative::Less)
        } else if let Some((a, b)) = s.split_once('>') {
            (a, b, Alternative::Greater)
        } else {
            return None;
        };
        let (a, b) = (a.trim(), b.trim());
        (!a.is_empty() && !b.is_empty()).then(|| Self { a: a.into(), b: b.into(), alternative })
    }

    pub fn operator(&self) -> &'static str {
        match self.alternative {
            Alternative::TwoSided => "!=",
            Alternative::Less => "<",
            Alternative::Greater => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub comparison: Comparison,
    pub metric: String,
    /// Mann-Whitney p per test set.
    pub per_testset: Vec<(String, f64)>,
    pub merged: f64,
}

/// `**` below 0.001, `*` below 0.01.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "**"
    } else if p < 0.01 {
        "*"
    } else {
        ""
    }
}

fn cell<'a>(runs: &'a RunScores, setting: &str, testset: &str, metric: &str) -> Result<&'a [f64], StatsError> {
    let scores = runs
        .get(setting)
        .ok_or_else(|| StatsError::MissingSetting(setting.into()))?
        .get(testset)
        .and_then(|m| m.get(metric))
        .ok_or_else(|| StatsError::MissingCell { setting: setting.into(), testset: testset.into(), metric: metric.into() })?;
    if scores.len() < 2 {
        return Err(StatsError::TooFewScores {
            setting: setting.into(),
            testset: testset.into(),
            metric: metric.into(),
            n: scores.len(),
        });
    }
    Ok(scores)
}

/// For each comparison and each metric present in setting `a`, runs a
/// Mann-Whitney test per test set and merges them with Fisher's method.
pub fn compare_settings(runs: &RunScores, comparisons: &[Comparison]) -> Result<Vec<ComparisonRow>, StatsError> {
    let mut rows = Vec::new();
    for cmp in comparisons {
        let a = runs.get(&cmp.a).ok_or_else(|| StatsError::MissingSetting(cmp.a.clone()))?;
        if !runs.contains_key(&cmp.b) {
            return Err(StatsError::MissingSetting(cmp.b.clone()));
        }
        let mut metrics: Vec<&String> = a.values().flat_map(|m| m.keys()).collect();
        metrics.sort();
        metrics.dedup();
        for metric in metrics {
            let mut per_testset = Vec::new();
            for testset in a.keys().filter(|t| a[*t].contains_key(metric)) {
                let xs = cell(runs, &cmp.a, testset, metric)?;
                let ys = cell(runs, &cmp.b, testset, metric)?;
                per_testset.push((testset.clone(), mann_whitney_u(xs, ys, cmp.alternative)?.p));
            }
            let ps: Vec<f64> = per_testset.iter().map(|(_, p)| *p).collect();
            let merged = fisher_combine(&ps)?;
            rows.push(ComparisonRow { comparison: cmp.clone(), metric: metric.clone(), per_testset, merged });
        }
    }
    Ok(rows)
}

/// One line per (comparison, metric, test set) plus a `fisher` line per
/// (comparison, metric).
pub fn comparison_tsv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("a\top\tb\tmetric\ttestset\tp\tstars\n");
    for row in rows {
        let c = &row.comparison;
        let cells = row.per_testset.iter().map(|(t, p)| (t.as_str(), *p)).chain([("fisher", row.merged)]);
        for (testset, p) in cells {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}\t{:.6e}\t{}", c.a, c.operator(), c.b, row.metric, testset, p, stars(p));
        }
    }
    out
}

/// Table-style text rendering: one line per comparison with the merged
/// p-value for every metric.
pub fn comparison_text(rows: &[ComparisonRow]) -> String {
    let mut metrics: Vec<&str> = rows.iter().map(|r| r.metric.as_str()).collect();
    metrics.sort();
    metrics.dedup();
    let mut order: Vec<&Comparison> = Vec::new();
    for r in rows {
        if !order.contains(&&r.comparison) {
            order.push(&r.comparison);
        }
    }
    let label = |c: &Comparison| format!("{} {} {}", c.a, c.operator(), c.b);
    let width = order.iter().map(|c| label(c).len()).max().unwrap_or(10).max(10);
    let mut out = format!("{:<width$}", "comparison");
    for m in &metrics {
        let _ = write!(out, "  {m:>14}");
    }
    out.push('\n');
    for c in order {
        let _ = write!(out, "{:<width$}", label(c));
        for m in &metrics {
            let cellv = rows
                .iter()
                .find(|r| &r.comparison == c && r.metric == *m)
                .map(|r| format!("{}{}", format_p(r.merged), stars(r.merged)))
                .unwrap_or_else(|| "-".into());
            let _ = write!(out, "  {cellv:>14}");
        }
        out.push('\n');
    }
    out
}

fn format_p(p: f64) -> String {
    if p >= 0.01 {
        format!("{p:.4}")
    } else {
        format!("{p:.2e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    pub metric: String,
    pub reference: String,
    pub testset: String,
    pub pearson: Pearson,
    pub n: usize,
}

/// Correlates each test set's scores with the reference test set's, pairing
/// values by (setting, epoch) for one metric.
pub fn correlate_testsets(runs: &RunScores, metric: &str, reference: &str) -> Result<Vec<Correlation>, StatsError> {
    let mut testsets: Vec<&String> = runs.values().flat_map(|t| t.keys()).collect();
    testsets.sort();
    testsets.dedup();
    let mut out = Vec::new();
    for testset in testsets.into_iter().filter(|t| t.as_str() != reference) {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for by_testset in runs.values() {
            let (Some(r), Some(t)) = (
                by_testset.get(reference).and_then(|m| m.get(metric)),
                by_testset.get(testset).and_then(|m| m.get(metric)),
            ) else {
                continue;
            };
            if r.len() != t.len() {
                return Err(StatsError::LengthMismatch(r.len(), t.len()));
            }
            xs.extend_from_slice(r);
            ys.extend_from_slice(t);
        }
        let n = xs.len();
        out.push(Correlation {
            metric: metric.into(),
            reference: reference.into(),
            testset: testset.clone(),
            pearson: pearson(&xs, &ys)?,
            n,
        });
    }
    Ok(out)
}

pub fn correlation_tsv(rows: &[Correlation]) -> String {
    let mut out = String::from("metric\treference\ttestset\tn\tr\tp\n");
    for c in rows {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{:.4}\t{:.6e}", c.metric, c.reference, c.testset, c.n, c.pearson.r, c.pearson.p);
    }
    out
}
