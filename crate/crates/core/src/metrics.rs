//! Evaluation: graded nDCG@k, rank-biased overlap, and the behavior
//! counters gathered from permutation traces.
//!
//! nDCG uses linear gain `rel / log2(i + 1)` (the trec_eval `ndcg_cut`
//! convention) and an ideal ordering built from every judged grade of the
//! query, so unretrieved relevant passages still cost. RBO is the
//! extrapolated variant for lists of possibly different lengths.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::hash::Hash;

use serde::Serialize;
use thiserror::Error;

use crate::rerank::{Anomalies, WindowRecord};
use crate::types::{Judgments, Ranking};

pub const DEFAULT_RBO_P: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("RBO persistence {0} must be in (0, 1)")]
    Persistence(f64),
    #[error("list contains a duplicate item")]
    DuplicateItem,
    #[error("no query of the run has judgments")]
    NoOverlap,
    #[error("query `{0}` appears twice in the run")]
    DuplicateQuery(String),
    #[error("cutoff k must be at least 1")]
    ZeroCutoff,
}

/// nDCG@k over grades already laid out in ranked order. `judged` is every
/// grade known for the query, used to build the ideal ordering.
pub fn ndcg_from_grades(ranked: &[u32], judged: &[u32], k: usize) -> f64 {
    let actual = dcg(ranked.iter().copied(), k);
    let mut ideal = judged.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter(), k);
    if idcg == 0.0 {
        0.0
    } else {
        actual / idcg
    }
}

fn dcg(grades: impl Iterator<Item = u32>, k: usize) -> f64 {
    grades
        .take(k)
        .enumerate()
        .map(|(i, g)| g as f64 / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG@k of `ranking` against its query's judgments; unjudged passages
/// have grade 0. Returns 0 for `k == 0` or when nothing is relevant.
pub fn ndcg_at_k(ranking: &Ranking, judgments: &Judgments, k: usize) -> f64 {
    let qid = ranking.query_id();
    let ranked: Vec<u32> = ranking.docids().map(|d| judgments.grade(qid, d)).collect();
    let judged: Vec<u32> = judgments
        .for_query(qid)
        .map(|m| m.values().copied().collect())
        .unwrap_or_default();
    ndcg_from_grades(&ranked, &judged, k)
}

/// Extrapolated rank-biased overlap. Identical lists score exactly 1,
/// disjoint lists exactly 0; two empty lists count as identical.
pub fn rbo<T: Eq + Hash>(a: &[T], b: &[T], p: f64) -> Result<f64, MetricsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(MetricsError::Persistence(p));
    }
    if has_duplicates(a) || has_duplicates(b) {
        return Err(MetricsError::DuplicateItem);
    }
    if a == b {
        return Ok(1.0);
    }
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let (s, l) = (short.len(), long.len());
    if s == 0 {
        return Ok(0.0);
    }

    // overlap[d - 1] = |short[..min(d, s)] ∩ long[..d]|
    let mut overlap = Vec::with_capacity(l);
    let mut seen_short = HashSet::with_capacity(s);
    let mut seen_long = HashSet::with_capacity(l);
    let mut x = 0usize;
    for d in 0..l {
        let from_long = &long[d];
        if d < s {
            let from_short = &short[d];
            if from_short == from_long {
                x += 1;
            } else {
                x += seen_long.contains(from_short) as usize;
                x += seen_short.contains(from_long) as usize;
            }
            seen_short.insert(from_short);
        } else {
            x += seen_short.contains(from_long) as usize;
        }
        seen_long.insert(from_long);
        overlap.push(x);
    }

    let x_s = overlap[s - 1] as f64;
    let x_l = overlap[l - 1] as f64;
    let (sf, lf) = (s as f64, l as f64);
    let mut weight = 1.0;
    let mut sum = 0.0;
    for d in 1..=l {
        weight *= p;
        let df = d as f64;
        sum += overlap[d - 1] as f64 / df * weight;
        if d > s {
            sum += x_s * (df - sf) / (sf * df) * weight;
        }
    }
    let value = (1.0 - p) / p * sum + ((x_l - x_s) / lf + x_s / sf) * weight;
    Ok(value.clamp(0.0, 1.0))
}

fn has_duplicates<T: Eq + Hash>(items: &[T]) -> bool {
    let mut seen = HashSet::with_capacity(items.len());
    !items.iter().all(|i| seen.insert(i))
}

pub fn metric_name(k: usize) -> String {
    format!("nDCG@{k}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Metric names in cutoff order.
    pub metrics: Vec<String>,
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
    pub averages: BTreeMap<String, f64>,
    pub evaluated: usize,
    /// Run queries without judgments.
    pub skipped: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Metric names left-aligned, averages to four decimals.
    pub fn to_table(&self) -> String {
        let width = self.metrics.iter().map(String::len).max().unwrap_or(0).max("queries".len());
        let mut out = String::new();
        for m in &self.metrics {
            let _ = writeln!(out, "{m:<width$}  {:.4}", self.averages[m]);
        }
        let _ = writeln!(out, "{:<width$}  {}", "queries", self.evaluated);
        if self.skipped > 0 {
            let _ = writeln!(out, "{:<width$}  {}", "skipped", self.skipped);
        }
        out
    }
}

pub fn evaluate(run: &[Ranking], qrels: &Judgments, ks: &[usize]) -> Result<EvalReport, MetricsError> {
    if ks.contains(&0) {
        return Err(MetricsError::ZeroCutoff);
    }
    let metrics: Vec<String> = ks.iter().map(|&k| metric_name(k)).collect();
    let mut per_query = BTreeMap::new();
    let mut skipped = 0;
    for ranking in run {
        let qid = ranking.query_id();
        if per_query.contains_key(qid) {
            return Err(MetricsError::DuplicateQuery(qid.to_string()));
        }
        if !qrels.contains_query(qid) {
            skipped += 1;
            continue;
        }
        let row: BTreeMap<String, f64> = ks
            .iter()
            .zip(&metrics)
            .map(|(&k, name)| (name.clone(), ndcg_at_k(ranking, qrels, k)))
            .collect();
        per_query.insert(qid.to_string(), row);
    }
    if per_query.is_empty() {
        return Err(MetricsError::NoOverlap);
    }
    let n = per_query.len() as f64;
    let averages = metrics
        .iter()
        .map(|m| {
            let total: f64 = per_query.values().map(|row| row[m]).sum();
            (m.clone(), total / n)
        })
        .collect();
    Ok(EvalReport {
        metrics,
        evaluated: per_query.len(),
        per_query,
        averages,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BehaviorStats {
    pub windows: usize,
    pub repetition: usize,
    pub missing: usize,
    pub rejection: usize,
    /// Mean of the overlap samples; 1 when there are none.
    pub rbo_mean: f64,
    pub rbo_samples: usize,
}

impl Default for BehaviorStats {
    fn default() -> Self {
        Self {
            windows: 0,
            repetition: 0,
            missing: 0,
            rejection: 0,
            rbo_mean: 1.0,
            rbo_samples: 0,
        }
    }
}

impl BehaviorStats {
    pub fn to_table(&self) -> String {
        let rows = [
            ("windows", self.windows.to_string()),
            ("repetition", self.repetition.to_string()),
            ("missing", self.missing.to_string()),
            ("rejection", self.rejection.to_string()),
            ("rbo_mean", format!("{:.4}", self.rbo_mean)),
            ("rbo_samples", self.rbo_samples.to_string()),
        ];
        rows.iter().fold(String::new(), |mut out, (k, v)| {
            let _ = writeln!(out, "{k:<11}  {v}");
            out
        })
    }
}

/// Sums anomaly counters over parsed windows and averages RBO samples.
pub fn collect_behavior<'a>(
    anomalies: impl IntoIterator<Item = &'a Anomalies>,
    rbo_samples: impl IntoIterator<Item = f64>,
) -> BehaviorStats {
    let mut stats = BehaviorStats::default();
    for a in anomalies {
        stats.windows += 1;
        stats.repetition += a.repetition;
        stats.missing += a.missing;
        stats.rejection += a.rejected as usize;
    }
    let mut total = 0.0;
    for v in rbo_samples {
        total += v;
        stats.rbo_samples += 1;
    }
    if stats.rbo_samples > 0 {
        stats.rbo_mean = total / stats.rbo_samples as f64;
    }
    stats
}

pub fn behavior_from_trace(records: &[WindowRecord]) -> BehaviorStats {
    collect_behavior(
        records.iter().map(|r| &r.anomalies),
        records.iter().filter_map(|r| r.rbo),
    )
}
