//! Retrieval evaluation: P@K, R@K, F1@K, NDCG@K (binary gains), MRR,
//! exact paired two-tailed sign tests, and per-template delta breakdowns.
//!
//! Evaluation always covers every query in the qrels: a query with no run
//! entries (or no gold entity in its candidate pool) scores 0 on all
//! metrics rather than being dropped.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::logic::QuerySpec;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("qrels line {line}: {message}")]
    QrelsLine { line: usize, message: String },
    #[error("sign test inputs have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("io error: {0}")]
    Io(String),
}

/// Binary relevance judgments: qid -> set of relevant entity ids.
pub type Qrels = BTreeMap<String, HashSet<String>>;

/// Parse TREC qrels (`qid 0 entity_id rel`, rel in {0,1}).
pub fn load_qrels(path: &Path) -> Result<Qrels, EvalError> {
    let file = File::open(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Qrels::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| EvalError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(EvalError::QrelsLine {
                line: idx + 1,
                message: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let rel: u8 = fields[3].parse().map_err(|e| EvalError::QrelsLine {
            line: idx + 1,
            message: format!("bad relevance: {e}"),
        })?;
        if rel > 1 {
            return Err(EvalError::QrelsLine {
                line: idx + 1,
                message: format!("binary relevance expected, got {rel}"),
            });
        }
        let entry = out.entry(fields[0].to_string()).or_default();
        if rel == 1 {
            entry.insert(fields[2].to_string());
        }
    }
    Ok(out)
}

pub fn save_qrels(path: &Path, qrels: &Qrels) -> Result<(), EvalError> {
    use std::io::Write;
    let mut f =
        File::create(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    for (qid, rels) in qrels {
        let mut ids: Vec<&String> = rels.iter().collect();
        ids.sort();
        for id in ids {
            writeln!(f, "{qid} 0 {id} 1").map_err(|e| EvalError::Io(e.to_string()))?;
        }
    }
    Ok(())
}

/// |top-k ∩ relevant| / k. The denominator is k even when fewer results
/// exist, penalizing short lists consistently.
pub fn precision_at_k(ranking: &[String], relevant: &HashSet<String>, k: usize) -> f64 {
    assert!(k >= 1);
    let hits = ranking
        .iter()
        .take(k)
        .filter(|id| relevant.contains(*id))
        .count();
    hits as f64 / k as f64
}

/// |top-k ∩ relevant| / |relevant|; 0 when the relevant set is empty.
pub fn recall_at_k(ranking: &[String], relevant: &HashSet<String>, k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranking
        .iter()
        .take(k)
        .filter(|id| relevant.contains(*id))
        .count();
    hits as f64 / relevant.len() as f64
}

/// Harmonic mean of P@K and R@K; 0 when both are 0.
pub fn f1_at_k(ranking: &[String], relevant: &HashSet<String>, k: usize) -> f64 {
    let p = precision_at_k(ranking, relevant, k);
    let r = recall_at_k(ranking, relevant, k);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Binary-gain NDCG with 1/log2(rank+1) discounts; the ideal DCG places
/// min(|relevant|, k) ones at the top. 0 when the ideal DCG is 0.
pub fn ndcg_at_k(ranking: &[String], relevant: &HashSet<String>, k: usize) -> f64 {
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| relevant.contains(*id))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let ideal_hits = relevant.len().min(k);
    let idcg: f64 = (0..ideal_hits).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Reciprocal rank of the first relevant result; 0 if none appears.
pub fn mrr(ranking: &[String], relevant: &HashSet<String>) -> f64 {
    ranking
        .iter()
        .position(|id| relevant.contains(id))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Exact paired two-tailed sign test result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignTestResult {
    pub p_value: f64,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    /// All pairs tied; p is undefined and reported as 1.0.
    pub all_ties: bool,
}

/// Paired two-tailed sign test over aligned per-query values. Ties are
/// discarded; with n non-ties and s wins for the larger side,
/// p = 2 * P(X >= s) under Binomial(n, 0.5), capped at 1. Exact binomial,
/// no normal approximation.
pub fn sign_test(per_query_a: &[f64], per_query_b: &[f64]) -> Result<SignTestResult, EvalError> {
    if per_query_a.len() != per_query_b.len() {
        return Err(EvalError::LengthMismatch(
            per_query_a.len(),
            per_query_b.len(),
        ));
    }
    let mut wins_a = 0usize;
    let mut wins_b = 0usize;
    let mut ties = 0usize;
    for (a, b) in per_query_a.iter().zip(per_query_b) {
        if a > b {
            wins_a += 1;
        } else if b > a {
            wins_b += 1;
        } else {
            ties += 1;
        }
    }
    let n = wins_a + wins_b;
    if n == 0 {
        return Ok(SignTestResult {
            p_value: 1.0,
            wins_a,
            wins_b,
            ties,
            all_ties: true,
        });
    }
    let s = wins_a.max(wins_b);
    let p = (2.0 * binomial_upper_tail(n, s)).min(1.0);
    Ok(SignTestResult {
        p_value: p,
        wins_a,
        wins_b,
        ties,
        all_ties: false,
    })
}

// P(X >= s) for X ~ Binomial(n, 1/2). Exact integer arithmetic for small
// n (C(n,k) fits u128 and 2^n is a representable power of two); log-space
// accumulation beyond that.
fn binomial_upper_tail(n: usize, s: usize) -> f64 {
    if s > n {
        return 0.0;
    }
    if n <= 100 {
        let mut sum: u128 = 0;
        for k in s..=n {
            sum += choose_u128(n, k);
        }
        sum as f64 / 2f64.powi(n as i32)
    } else {
        let ln_half_n = n as f64 * 0.5f64.ln();
        (s..=n)
            .map(|k| (ln_choose(n, k) + ln_half_n).exp())
            .sum()
    }
}

fn choose_u128(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut num: u128 = 1;
    for i in 0..k {
        num = num * (n - i) as u128 / (i + 1) as u128;
    }
    num
}

fn ln_choose(n: usize, k: usize) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Per-query metric values at the fixed report cutoffs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct QueryMetrics {
    pub p1: f64,
    pub p10: f64,
    pub r1: f64,
    pub r10: f64,
    pub f1_1: f64,
    pub f1_10: f64,
    pub ndcg1: f64,
    pub ndcg10: f64,
    pub mrr: f64,
}

impl QueryMetrics {
    fn compute(ranking: &[String], relevant: &HashSet<String>) -> Self {
        QueryMetrics {
            p1: precision_at_k(ranking, relevant, 1),
            p10: precision_at_k(ranking, relevant, 10),
            r1: recall_at_k(ranking, relevant, 1),
            r10: recall_at_k(ranking, relevant, 10),
            f1_1: f1_at_k(ranking, relevant, 1),
            f1_10: f1_at_k(ranking, relevant, 10),
            ndcg1: ndcg_at_k(ranking, relevant, 1),
            ndcg10: ndcg_at_k(ranking, relevant, 10),
            mrr: mrr(ranking, relevant),
        }
    }

    fn fields(&self) -> [(&'static str, f64); 9] {
        [
            ("P@1", self.p1),
            ("P@10", self.p10),
            ("R@1", self.r1),
            ("R@10", self.r10),
            ("F1@1", self.f1_1),
            ("F1@10", self.f1_10),
            ("NDCG@1", self.ndcg1),
            ("NDCG@10", self.ndcg10),
            ("MRR", self.mrr),
        ]
    }
}

/// Macro-averaged report; per-query values are retained so significance
/// tests and breakdowns can be recomputed from the same numbers the
/// aggregates came from.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub per_query: BTreeMap<String, QueryMetrics>,
    pub means: QueryMetrics,
    pub query_count: usize,
}

/// Evaluate a run (qid -> ranked entity ids) against qrels, over every
/// query present in the qrels.
pub fn evaluate_run(run: &BTreeMap<String, Vec<String>>, qrels: &Qrels) -> MetricsReport {
    let empty: Vec<String> = Vec::new();
    let mut per_query = BTreeMap::new();
    for (qid, relevant) in qrels {
        let ranking = run.get(qid).unwrap_or(&empty);
        per_query.insert(qid.clone(), QueryMetrics::compute(ranking, relevant));
    }
    let n = per_query.len().max(1) as f64;
    let mut means = QueryMetrics::default();
    for m in per_query.values() {
        means.p1 += m.p1 / n;
        means.p10 += m.p10 / n;
        means.r1 += m.r1 / n;
        means.r10 += m.r10 / n;
        means.f1_1 += m.f1_1 / n;
        means.f1_10 += m.f1_10 / n;
        means.ndcg1 += m.ndcg1 / n;
        means.ndcg10 += m.ndcg10 / n;
        means.mrr += m.mrr / n;
    }
    let query_count = per_query.len();
    MetricsReport {
        per_query,
        means,
        query_count,
    }
}

impl MetricsReport {
    /// Aligned-column text table for humans.
    pub fn to_table(&self, label: &str) -> String {
        let mut out = String::new();
        let fields = self.means.fields();
        let _ = writeln!(out, "{:<16} {:>8} queries", label, self.query_count);
        for (name, _) in fields {
            let _ = write!(out, "{name:>9}");
        }
        let _ = writeln!(out);
        for (_, v) in fields {
            let _ = write!(out, "{v:>9.4}");
        }
        let _ = writeln!(out);
        out
    }

    /// Sign-test table against a baseline report, one row per metric.
    pub fn sign_tests_against(
        &self,
        baseline: &MetricsReport,
    ) -> Result<Vec<(String, SignTestResult)>, EvalError> {
        let qids: Vec<&String> = self.per_query.keys().collect();
        let extract = |report: &MetricsReport, idx: usize| -> Vec<f64> {
            qids.iter()
                .map(|qid| {
                    report
                        .per_query
                        .get(*qid)
                        .map_or(0.0, |m| m.fields()[idx].1)
                })
                .collect()
        };
        let mut out = Vec::new();
        for (idx, (name, _)) in self.means.fields().iter().enumerate() {
            let a = extract(self, idx);
            let b = extract(baseline, idx);
            out.push((name.to_string(), sign_test(&a, &b)?));
        }
        Ok(out)
    }
}

/// Per-template mean ΔP@1 between two runs, with a per-group sign test.
#[derive(Debug, Clone, Serialize)]
pub struct TemplateDelta {
    pub template: String,
    pub query_count: usize,
    pub mean_delta_p1: f64,
    pub sign_test: SignTestResult,
}

/// Group queries by template label and report mean(P@1_a − P@1_b) per
/// group. Queries without a label fall into the "(none)" group.
pub fn template_breakdown(
    run_a: &BTreeMap<String, Vec<String>>,
    run_b: &BTreeMap<String, Vec<String>>,
    qrels: &Qrels,
    queries: &[QuerySpec],
) -> Result<Vec<TemplateDelta>, EvalError> {
    let empty: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for q in queries {
        let Some(relevant) = qrels.get(&q.qid) else { continue };
        let label = q
            .template_label
            .clone()
            .unwrap_or_else(|| "(none)".to_string());
        let a = precision_at_k(run_a.get(&q.qid).unwrap_or(&empty), relevant, 1);
        let b = precision_at_k(run_b.get(&q.qid).unwrap_or(&empty), relevant, 1);
        let entry = groups.entry(label).or_default();
        entry.0.push(a);
        entry.1.push(b);
    }
    let mut out = Vec::new();
    for (template, (a, b)) in groups {
        let n = a.len();
        let mean_delta_p1 =
            a.iter().zip(&b).map(|(x, y)| x - y).sum::<f64>() / n.max(1) as f64;
        out.push(TemplateDelta {
            template,
            query_count: n,
            mean_delta_p1,
            sign_test: sign_test(&a, &b)?,
        });
    }
    Ok(out)
}

/// CSV of per-template deltas for external plotting.
pub fn breakdown_csv(deltas: &[TemplateDelta]) -> String {
    let mut out = String::from("template,queries,mean_delta_p1,p_value\n");
    for d in deltas {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            d.template, d.query_count, d.mean_delta_p1, d.sign_test.p_value
        );
    }
    out
}
