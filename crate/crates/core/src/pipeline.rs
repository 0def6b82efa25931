//! Per-query orchestration: take base-retriever candidates, elicit one
//! plausibility per predicate per candidate, compute the posterior of the
//! query's logical form by weighted model counting, and rerank by
//! posterior with stable ties (equal posteriors keep base-retriever
//! order). A cost ledger tracks backend calls and the one-off parse cost
//! per query.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::inference::{posterior, InferenceError, PriorAssignment};
use crate::logic::QuerySpec;
use crate::oracle::{build_prompt, elicit, OracleBackend, PromptMode, DEFAULT_CONTEXT_CAP, DEFAULT_SUFFIX};
use crate::retrieval::{Entity, RetrievalError, ScoredCandidate};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no posterior for candidate {0}")]
    MissingPosterior(String),
    #[error("candidate entity {0} not present in corpus")]
    UnknownCandidate(String),
    #[error("cost ledger is empty")]
    EmptyLedger,
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("io error: {0}")]
    Io(String),
}

/// Posterior for one candidate; `degraded` marks entities where at least
/// one predicate prior fell back to 0.5 after oracle failure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntityScore {
    pub posterior: f64,
    pub degraded: bool,
    /// parametric_plus was requested but the entity had no description.
    pub missing_context: bool,
    pub backend_calls: u64,
}

/// Scoring knobs shared across a run.
#[derive(Debug, Clone)]
pub struct ScoringOptions {
    pub mode: PromptMode,
    pub suffix: String,
    pub context_cap: usize,
    /// Max candidates scored concurrently per query.
    pub concurrency: usize,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        ScoringOptions {
            mode: PromptMode::ParametricPlus,
            suffix: DEFAULT_SUFFIX.to_string(),
            context_cap: DEFAULT_CONTEXT_CAP,
            concurrency: 1,
        }
    }
}

/// Elicit one prior per predicate and compute the posterior of the
/// query's form for this entity. Oracle failures degrade to a 0.5 prior
/// rather than aborting; the flag keeps evaluation honest.
pub fn score_entity(
    query: &QuerySpec,
    entity: &Entity,
    backend: &dyn OracleBackend,
    opts: &ScoringOptions,
) -> Result<EntityScore, PipelineError> {
    let mut priors = PriorAssignment::new();
    let mut degraded = false;
    let mut missing_context = false;
    let mut backend_calls = 0u64;
    for template in &query.predicates {
        let built = build_prompt(entity, template, opts.mode, &opts.suffix, opts.context_cap);
        missing_context |= built.missing_description;
        backend_calls += 1;
        let prior = match elicit(backend, &built.prompt) {
            Ok(p) => p,
            Err(_) => {
                degraded = true;
                0.5
            }
        };
        priors.set(template.id.clone(), prior)?;
    }
    let value = posterior(&query.form, &priors)?;
    Ok(EntityScore {
        posterior: value,
        degraded,
        missing_context,
        backend_calls,
    })
}

/// One reranked entry.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankedEntry {
    pub entity_id: String,
    pub posterior: f64,
    pub base_rank: usize,
    pub degraded: bool,
}

/// Final per-query ranking: posterior non-increasing; among equal
/// posteriors, base_rank strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankedList {
    pub qid: String,
    pub entries: Vec<RerankedEntry>,
}

impl RerankedList {
    pub fn entity_ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.entity_id.clone()).collect()
    }
}

/// Stable descending sort by posterior; ties keep base-retriever order.
pub fn rerank(
    qid: &str,
    candidates: &[ScoredCandidate],
    posteriors: &HashMap<String, EntityScore>,
) -> Result<RerankedList, PipelineError> {
    let mut entries = Vec::with_capacity(candidates.len());
    let mut ordered: Vec<&ScoredCandidate> = candidates.iter().collect();
    ordered.sort_by_key(|c| c.base_rank);
    for c in ordered {
        let score = posteriors
            .get(&c.entity_id)
            .ok_or_else(|| PipelineError::MissingPosterior(c.entity_id.clone()))?;
        entries.push(RerankedEntry {
            entity_id: c.entity_id.clone(),
            posterior: score.posterior,
            base_rank: c.base_rank,
            degraded: score.degraded,
        });
    }
    // sort_by is stable, so equal posteriors keep the base_rank order
    entries.sort_by(|a, b| b.posterior.partial_cmp(&a.posterior).expect("finite"));
    Ok(RerankedList {
        qid: qid.to_string(),
        entries,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairCost {
    pub predicate_calls: u64,
    pub degraded: bool,
}

/// Token-cost accounting: per-pair backend calls plus each query's
/// one-off parse cost, amortized over that query's candidates.
#[derive(Debug, Clone, Default)]
pub struct CostLedger {
    pub pairs: BTreeMap<(String, String), PairCost>,
    pub parse_tokens: BTreeMap<String, u64>,
}

impl CostLedger {
    pub fn record_pair(&mut self, qid: &str, entity_id: &str, cost: PairCost) {
        self.pairs
            .insert((qid.to_string(), entity_id.to_string()), cost);
    }

    pub fn record_parse(&mut self, qid: &str, tokens: u64) {
        self.parse_tokens.insert(qid.to_string(), tokens);
    }

    pub fn candidates_for(&self, qid: &str) -> usize {
        self.pairs.keys().filter(|(q, _)| q == qid).count()
    }

    pub fn total_predicate_calls(&self) -> u64 {
        self.pairs.values().map(|p| p.predicate_calls).sum()
    }

    /// Mean over all (query, entity) pairs of
    /// `predicate_calls + parse_tokens / candidate_count_for_that_query`.
    pub fn cost_per_pair(&self) -> Result<f64, PipelineError> {
        if self.pairs.is_empty() {
            return Err(PipelineError::EmptyLedger);
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for (qid, _) in self.pairs.keys() {
            *counts.entry(qid.as_str()).or_insert(0) += 1;
        }
        let mut total = 0.0;
        for ((qid, _), cost) in &self.pairs {
            let parse = *self.parse_tokens.get(qid).unwrap_or(&0) as f64;
            let n = counts[qid.as_str()] as f64;
            total += cost.predicate_calls as f64 + parse / n;
        }
        Ok(total / self.pairs.len() as f64)
    }

    /// Read a JSONL dump back; inverse of `dump`.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        use std::io::BufRead;
        #[derive(serde::Deserialize)]
        struct Row {
            qid: String,
            entity_id: String,
            predicate_calls: u64,
            parse_tokens: u64,
            degraded: bool,
        }
        let f = File::open(path)
            .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
        let mut ledger = CostLedger::default();
        for line in std::io::BufReader::new(f).lines() {
            let line = line.map_err(|e| PipelineError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row =
                serde_json::from_str(&line).map_err(|e| PipelineError::Io(e.to_string()))?;
            ledger.record_pair(
                &row.qid,
                &row.entity_id,
                PairCost {
                    predicate_calls: row.predicate_calls,
                    degraded: row.degraded,
                },
            );
            ledger.record_parse(&row.qid, row.parse_tokens);
        }
        Ok(ledger)
    }

    /// JSONL audit dump, one record per (query, entity) pair.
    pub fn dump(&self, path: &Path) -> Result<(), PipelineError> {
        #[derive(Serialize)]
        struct Row<'a> {
            qid: &'a str,
            entity_id: &'a str,
            predicate_calls: u64,
            parse_tokens: u64,
            degraded: bool,
        }
        let f = File::create(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(f);
        for ((qid, entity_id), cost) in &self.pairs {
            let row = Row {
                qid,
                entity_id,
                predicate_calls: cost.predicate_calls,
                parse_tokens: *self.parse_tokens.get(qid).unwrap_or(&0),
                degraded: cost.degraded,
            };
            let json = serde_json::to_string(&row).map_err(|e| PipelineError::Io(e.to_string()))?;
            writeln!(w, "{json}").map_err(|e| PipelineError::Io(e.to_string()))?;
        }
        Ok(())
    }
}

/// A query that could not be processed; the batch carries on.
#[derive(Debug, Clone)]
pub struct QueryFailure {
    pub qid: String,
    pub error: String,
}

#[derive(Debug, Default)]
pub struct PipelineOutput {
    pub runs: BTreeMap<String, RerankedList>,
    pub ledger: CostLedger,
    pub failures: Vec<QueryFailure>,
}

impl PipelineOutput {
    /// Render as TREC run lines with the posterior as score. The tag
    /// encodes method and mode; degraded entries get a `-degraded` suffix.
    pub fn write_run(&self, path: &Path, mode: PromptMode) -> Result<(), PipelineError> {
        let f = File::create(path)
            .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(f);
        self.render_run(&mut w, mode)
            .map_err(|e| PipelineError::Io(e.to_string()))
    }

    pub fn render_run<W: Write>(&self, w: &mut W, mode: PromptMode) -> std::io::Result<()> {
        for (qid, list) in &self.runs {
            for (rank, entry) in list.entries.iter().enumerate() {
                let tag = if entry.degraded {
                    format!("orlog-{mode}-degraded")
                } else {
                    format!("orlog-{mode}")
                };
                writeln!(
                    w,
                    "{qid} Q0 {} {} {} {tag}",
                    entry.entity_id,
                    rank + 1,
                    entry.posterior
                )?;
            }
        }
        Ok(())
    }
}

/// Score and rerank every query against its candidate list. Per-query
/// failures are recorded and skipped, never aborting the batch. Scoring
/// within a query runs on up to `opts.concurrency` threads; aggregation
/// is order-insensitive, so outputs are deterministic either way.
pub fn run_pipeline(
    queries: &[QuerySpec],
    candidates: &BTreeMap<String, Vec<ScoredCandidate>>,
    corpus: &HashMap<String, Entity>,
    backend: &dyn OracleBackend,
    opts: &ScoringOptions,
) -> PipelineOutput {
    let mut out = PipelineOutput::default();
    for query in queries {
        let cands = candidates.get(&query.qid).cloned().unwrap_or_default();
        match process_query(query, &cands, corpus, backend, opts) {
            Ok((list, pair_costs)) => {
                for (entity_id, cost) in pair_costs {
                    out.ledger.record_pair(&query.qid, &entity_id, cost);
                }
                out.ledger.record_parse(&query.qid, query.parse_tokens);
                out.runs.insert(query.qid.clone(), list);
            }
            Err(e) => out.failures.push(QueryFailure {
                qid: query.qid.clone(),
                error: e.to_string(),
            }),
        }
    }
    out
}

fn process_query(
    query: &QuerySpec,
    candidates: &[ScoredCandidate],
    corpus: &HashMap<String, Entity>,
    backend: &dyn OracleBackend,
    opts: &ScoringOptions,
) -> Result<(RerankedList, Vec<(String, PairCost)>), PipelineError> {
    let entities: Vec<&Entity> = candidates
        .iter()
        .map(|c| {
            corpus
                .get(&c.entity_id)
                .ok_or_else(|| PipelineError::UnknownCandidate(c.entity_id.clone()))
        })
        .collect::<Result<_, _>>()?;

    let scores: Vec<EntityScore> = score_all(query, &entities, backend, opts)?;

    let mut posteriors = HashMap::with_capacity(candidates.len());
    let mut pair_costs = Vec::with_capacity(candidates.len());
    for (c, s) in candidates.iter().zip(&scores) {
        posteriors.insert(c.entity_id.clone(), *s);
        pair_costs.push((
            c.entity_id.clone(),
            PairCost {
                predicate_calls: s.backend_calls,
                degraded: s.degraded,
            },
        ));
    }
    let list = rerank(&query.qid, candidates, &posteriors)?;
    Ok((list, pair_costs))
}

// Chunked scoped threads; results land in candidate order regardless of
// completion order.
fn score_all(
    query: &QuerySpec,
    entities: &[&Entity],
    backend: &dyn OracleBackend,
    opts: &ScoringOptions,
) -> Result<Vec<EntityScore>, PipelineError> {
    let workers = opts.concurrency.max(1).min(entities.len().max(1));
    if workers <= 1 || entities.len() <= 1 {
        return entities
            .iter()
            .map(|e| score_entity(query, e, backend, opts))
            .collect();
    }
    let mut results: Vec<Option<Result<EntityScore, PipelineError>>> =
        (0..entities.len()).map(|_| None).collect();
    let chunk = entities.len().div_ceil(workers);
    std::thread::scope(|scope| {
        for (slot, ents) in results.chunks_mut(chunk).zip(entities.chunks(chunk)) {
            scope.spawn(move || {
                for (out, e) in slot.iter_mut().zip(ents) {
                    *out = Some(score_entity(query, e, backend, opts));
                }
            });
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("all slots filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::{parse_formula, PredicateId, PredicateTemplate};
    use crate::oracle::MockBackend;

    fn query(qid: &str, form: &str, preds: &[&str]) -> QuerySpec {
        let predicates = preds
            .iter()
            .map(|p| {
                PredicateTemplate::new(PredicateId::new(*p).unwrap(), format!("{{e}} has {p}"))
                    .unwrap()
            })
            .collect();
        QuerySpec::new(qid, "raw", predicates, parse_formula(form).unwrap(), None, 0).unwrap()
    }

    fn entity(id: &str) -> Entity {
        Entity {
            id: id.to_string(),
            title: format!("Entity {id}"),
            description: "some text".to_string(),
        }
    }

    fn mock(rows: &[(&str, &str, f64)], default: Option<f64>) -> MockBackend {
        let table = rows
            .iter()
            .map(|(e, p, v)| ((e.to_string(), p.to_string()), *v))
            .collect();
        MockBackend::new(table, default)
    }

    fn opts() -> ScoringOptions {
        ScoringOptions {
            mode: PromptMode::Parametric,
            ..Default::default()
        }
    }

    #[test]
    fn score_entity_degenerate_priors() {
        let q = query("q1", "A & B & C & !D", &["A", "B", "C", "D"]);
        let backend = mock(
            &[("e1", "A", 1.0), ("e1", "B", 1.0), ("e1", "C", 1.0), ("e1", "D", 0.0)],
            None,
        );
        let s = score_entity(&q, &entity("e1"), &backend, &opts()).unwrap();
        assert_eq!(s.posterior, 1.0);
        assert!(!s.degraded);
        assert_eq!(s.backend_calls, 4);
    }

    #[test]
    fn score_entity_product_case() {
        let q = query("q1", "A & B & C & !D", &["A", "B", "C", "D"]);
        let backend = mock(
            &[("e1", "A", 0.9), ("e1", "B", 0.8), ("e1", "C", 1.0), ("e1", "D", 0.5)],
            None,
        );
        let s = score_entity(&q, &entity("e1"), &backend, &opts()).unwrap();
        assert!((s.posterior - 0.36).abs() < 1e-12);
    }

    #[test]
    fn score_entity_false_disjunction() {
        let q = query("q1", "A | B", &["A", "B"]);
        let backend = mock(&[("e1", "A", 0.0), ("e1", "B", 0.0)], None);
        let s = score_entity(&q, &entity("e1"), &backend, &opts()).unwrap();
        assert_eq!(s.posterior, 0.0);
    }

    #[test]
    fn score_entity_oracle_failure_degrades_to_half() {
        let q = query("q1", "A & B", &["A", "B"]);
        // backend knows A but not B, and has no default
        let backend = mock(&[("e1", "A", 1.0)], None);
        let s = score_entity(&q, &entity("e1"), &backend, &opts()).unwrap();
        assert!(s.degraded);
        assert_eq!(s.posterior, 0.5);
    }

    fn cand(id: &str, rank: usize) -> ScoredCandidate {
        ScoredCandidate {
            entity_id: id.to_string(),
            base_score: 1.0 / rank as f64,
            base_rank: rank,
        }
    }

    fn score(p: f64) -> EntityScore {
        EntityScore {
            posterior: p,
            degraded: false,
            missing_context: false,
            backend_calls: 0,
        }
    }

    #[test]
    fn rerank_stable_ties() {
        let cands = vec![cand("a", 1), cand("b", 2), cand("c", 3)];
        let posteriors: HashMap<String, EntityScore> = [
            ("a".to_string(), score(0.2)),
            ("b".to_string(), score(0.9)),
            ("c".to_string(), score(0.2)),
        ]
        .into();
        let list = rerank("q1", &cands, &posteriors).unwrap();
        let ids: Vec<_> = list.entries.iter().map(|e| e.entity_id.as_str()).collect();
        assert_eq!(ids, vec!["b", "a", "c"]);
    }

    #[test]
    fn rerank_all_equal_keeps_base_order() {
        let cands = vec![cand("x", 1), cand("y", 2), cand("z", 3)];
        let posteriors: HashMap<String, EntityScore> = cands
            .iter()
            .map(|c| (c.entity_id.clone(), score(0.5)))
            .collect();
        let list = rerank("q1", &cands, &posteriors).unwrap();
        let ids: Vec<_> = list.entries.iter().map(|e| e.entity_id.as_str()).collect();
        assert_eq!(ids, vec!["x", "y", "z"]);
    }

    #[test]
    fn rerank_strictly_increasing_reverses() {
        let cands = vec![cand("a", 1), cand("b", 2), cand("c", 3)];
        let posteriors: HashMap<String, EntityScore> = [
            ("a".to_string(), score(0.1)),
            ("b".to_string(), score(0.5)),
            ("c".to_string(), score(0.9)),
        ]
        .into();
        let list = rerank("q1", &cands, &posteriors).unwrap();
        let ids: Vec<_> = list.entries.iter().map(|e| e.entity_id.as_str()).collect();
        assert_eq!(ids, vec!["c", "b", "a"]);
    }

    #[test]
    fn rerank_missing_posterior() {
        let cands = vec![cand("a", 1)];
        let posteriors = HashMap::new();
        assert!(matches!(
            rerank("q1", &cands, &posteriors),
            Err(PipelineError::MissingPosterior(_))
        ));
    }

    #[test]
    fn cost_per_pair_fixture() {
        // 1 query, 4 predicates, parse cost 30, 20 candidates -> 4 + 30/20
        let mut ledger = CostLedger::default();
        for i in 0..20 {
            ledger.record_pair(
                "q1",
                &format!("e{i}"),
                PairCost {
                    predicate_calls: 4,
                    degraded: false,
                },
            );
        }
        ledger.record_parse("q1", 30);
        assert_eq!(ledger.cost_per_pair().unwrap(), 5.5);
    }

    #[test]
    fn cost_per_pair_zero_parse_is_predicate_count() {
        let mut ledger = CostLedger::default();
        for i in 0..7 {
            ledger.record_pair(
                "q1",
                &format!("e{i}"),
                PairCost {
                    predicate_calls: 3,
                    degraded: false,
                },
            );
        }
        ledger.record_parse("q1", 0);
        assert_eq!(ledger.cost_per_pair().unwrap(), 3.0);
    }

    #[test]
    fn cost_per_pair_empty_errors() {
        let ledger = CostLedger::default();
        assert!(matches!(
            ledger.cost_per_pair(),
            Err(PipelineError::EmptyLedger)
        ));
    }

    #[test]
    fn run_pipeline_batch_and_failures() {
        let q1 = query("q1", "A", &["A"]);
        let q2 = query("q2", "A", &["A"]);
        let mut candidates = BTreeMap::new();
        candidates.insert("q1".to_string(), vec![cand("e1", 1), cand("e2", 2)]);
        // q2 references an entity missing from the corpus
        candidates.insert("q2".to_string(), vec![cand("ghost", 1)]);
        let corpus: HashMap<String, Entity> = [
            ("e1".to_string(), entity("e1")),
            ("e2".to_string(), entity("e2")),
        ]
        .into();
        let backend = mock(&[("e1", "A", 0.2), ("e2", "A", 0.9)], Some(0.5));
        let out = run_pipeline(&[q1, q2], &candidates, &corpus, &backend, &opts());
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].qid, "q2");
        let ids: Vec<_> = out.runs["q1"]
            .entries
            .iter()
            .map(|e| e.entity_id.as_str())
            .collect();
        assert_eq!(ids, vec!["e2", "e1"]);
        assert_eq!(out.ledger.total_predicate_calls(), 2);
    }

    #[test]
    fn concurrent_matches_sequential() {
        let q = query("q1", "A & !B", &["A", "B"]);
        let mut rows = Vec::new();
        let mut candidates = Vec::new();
        let mut corpus = HashMap::new();
        for i in 0..17 {
            let id = format!("e{i}");
            rows.push((id.clone(), "A".to_string(), (i as f64) / 20.0));
            rows.push((id.clone(), "B".to_string(), 1.0 - (i as f64) / 20.0));
            candidates.push(cand(&id, i + 1));
            corpus.insert(id.clone(), entity(&id));
        }
        let table = rows
            .into_iter()
            .map(|(e, p, v)| ((e, p), v))
            .collect();
        let backend = MockBackend::new(table, None);
        let mut cmap = BTreeMap::new();
        cmap.insert("q1".to_string(), candidates);

        let seq = run_pipeline(&[q.clone()], &cmap, &corpus, &backend, &opts());
        let mut par_opts = opts();
        par_opts.concurrency = 4;
        let par = run_pipeline(&[q], &cmap, &corpus, &backend, &par_opts);

        let mut seq_bytes = Vec::new();
        let mut par_bytes = Vec::new();
        seq.render_run(&mut seq_bytes, PromptMode::Parametric).unwrap();
        par.render_run(&mut par_bytes, PromptMode::Parametric).unwrap();
        assert_eq!(seq_bytes, par_bytes);
    }

    #[test]
    fn ledger_dump_roundtrips_as_jsonl() {
        let mut ledger = CostLedger::default();
        ledger.record_pair("q1", "e1", PairCost { predicate_calls: 2, degraded: true });
        ledger.record_parse("q1", 12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        ledger.dump(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let row: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(row["qid"], "q1");
        assert_eq!(row["predicate_calls"], 2);
        assert_eq!(row["parse_tokens"], 12);
        assert_eq!(row["degraded"], true);
    }
}
