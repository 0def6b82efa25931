//! Candidate retrieval: in-memory inverted index with BM25 scoring, plus
//! import of externally produced TREC run files (e.g. dense-retriever
//! runs) so reranking can start from any base ranking.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Corpus member: identifier, title, and a possibly empty description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub title: String,
    #[serde(rename = "text", default)]
    pub description: String,
}

/// Which entity fields feed the index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum FieldPolicy {
    TitleOnly,
    #[default]
    TitlePlusDescription,
}

/// BM25 parameters; standard defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Default candidate pool size.
pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("duplicate entity id: {0}")]
    DuplicateEntityId(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("query has no tokens")]
    EmptyQuery,
    #[error("malformed run line {line}: {message}")]
    MalformedRunLine { line: usize, message: String },
    #[error("run references unknown entity id: {0}")]
    UnknownEntityId(String),
    #[error("corpus file line {line}: {message}")]
    CorpusFile { line: usize, message: String },
    #[error("index snapshot: {0}")]
    Snapshot(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Unicode-lowercase, split on any non-alphanumeric, drop empties.
/// No stemming; an optional stopword list is applied when given.
pub fn tokenize(text: &str, stopwords: Option<&HashSet<String>>) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .filter(|t| stopwords.is_none_or(|s| !s.contains(*t)))
        .map(str::to_string)
        .collect()
}

const SNAPSHOT_MAGIC: &str = "ORLOG_INDEX";
const SNAPSHOT_VERSION: u32 = 1;

/// Inverted index over the corpus. Immutable after build; concurrent
/// retrieval is safe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvertedIndex {
    magic: String,
    version: u32,
    pub params: Bm25Params,
    pub field_policy: FieldPolicy,
    /// Entity ids in build order; ordinals index into this.
    pub entity_ids: Vec<String>,
    /// term -> (entity ordinal, term frequency), sorted by ordinal.
    pub postings: HashMap<String, Vec<(u32, u32)>>,
    pub doc_lengths: Vec<u32>,
    pub avg_doc_len: f64,
}

impl InvertedIndex {
    pub fn doc_count(&self) -> usize {
        self.entity_ids.len()
    }

    /// Build over the chosen fields; deterministic for a fixed input order.
    pub fn build(
        corpus: &[Entity],
        field_policy: FieldPolicy,
        params: Bm25Params,
        stopwords: Option<&HashSet<String>>,
    ) -> Result<Self, RetrievalError> {
        if corpus.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let mut seen = HashSet::new();
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        let mut entity_ids = Vec::with_capacity(corpus.len());
        for (ord, e) in corpus.iter().enumerate() {
            if !seen.insert(e.id.clone()) {
                return Err(RetrievalError::DuplicateEntityId(e.id.clone()));
            }
            let text = match field_policy {
                FieldPolicy::TitleOnly => e.title.clone(),
                FieldPolicy::TitlePlusDescription => format!("{} {}", e.title, e.description),
            };
            let tokens = tokenize(&text, stopwords);
            doc_lengths.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (term, freq) in tf {
                postings.entry(term).or_default().push((ord as u32, freq));
            }
            entity_ids.push(e.id.clone());
        }
        let avg_doc_len = doc_lengths.iter().map(|&l| l as f64).sum::<f64>()
            / doc_lengths.len() as f64;
        Ok(InvertedIndex {
            magic: SNAPSHOT_MAGIC.to_string(),
            version: SNAPSHOT_VERSION,
            params,
            field_policy,
            entity_ids,
            postings,
            doc_lengths,
            avg_doc_len,
        })
    }

    fn idf(&self, term: &str) -> f64 {
        let df = self.postings.get(term).map_or(0, |p| p.len()) as f64;
        let n = self.doc_count() as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 score of one document for a tokenized query. Absent terms
    /// contribute 0.
    pub fn bm25_score(&self, query_terms: &[String], ordinal: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let len = self.doc_lengths[ordinal] as f64;
        let norm = k1 * (1.0 - b + b * len / self.avg_doc_len);
        let mut score = 0.0;
        for term in query_terms {
            let Some(plist) = self.postings.get(term) else { continue };
            let Ok(pos) = plist.binary_search_by_key(&(ordinal as u32), |&(o, _)| o) else {
                continue;
            };
            let tf = plist[pos].1 as f64;
            score += self.idf(term) * tf * (k1 + 1.0) / (tf + norm);
        }
        score
    }

    /// Top-k by BM25, descending; ties broken by ascending entity id.
    /// Entities with zero score (no query term match) are not returned.
    pub fn retrieve_topk(
        &self,
        query_text: &str,
        k: usize,
        stopwords: Option<&HashSet<String>>,
    ) -> Result<Vec<ScoredCandidate>, RetrievalError> {
        assert!(k >= 1, "k must be >= 1");
        let terms = tokenize(query_text, stopwords);
        if terms.is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        // Only documents containing at least one query term can score > 0.
        let mut matched: HashSet<u32> = HashSet::new();
        for t in &terms {
            if let Some(plist) = self.postings.get(t) {
                matched.extend(plist.iter().map(|&(o, _)| o));
            }
        }
        let mut scored: Vec<(f64, &str, u32)> = matched
            .into_iter()
            .map(|ord| {
                (
                    self.bm25_score(&terms, ord as usize),
                    self.entity_ids[ord as usize].as_str(),
                    ord,
                )
            })
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("bm25 scores are finite")
                .then_with(|| a.1.cmp(b.1))
        });
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(i, (score, id, _))| ScoredCandidate {
                entity_id: id.to_string(),
                base_score: score,
                base_rank: i + 1,
            })
            .collect())
    }

    /// Serialize to a versioned JSON snapshot.
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let f = File::create(path)
            .map_err(|e| RetrievalError::Io(format!("{}: {e}", path.display())))?;
        serde_json::to_writer(BufWriter::new(f), self)
            .map_err(|e| RetrievalError::Snapshot(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let f = File::open(path)
            .map_err(|e| RetrievalError::Io(format!("{}: {e}", path.display())))?;
        let idx: InvertedIndex = serde_json::from_reader(BufReader::new(f))
            .map_err(|e| RetrievalError::Snapshot(e.to_string()))?;
        if idx.magic != SNAPSHOT_MAGIC {
            return Err(RetrievalError::Snapshot(format!(
                "bad magic {:?}",
                idx.magic
            )));
        }
        if idx.version != SNAPSHOT_VERSION {
            return Err(RetrievalError::Snapshot(format!(
                "unsupported version {} (expected {SNAPSHOT_VERSION})",
                idx.version
            )));
        }
        Ok(idx)
    }
}

/// One base-retriever candidate. Ranks are 1-based and gap-free within a
/// list; base_score is non-increasing in base_rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub entity_id: String,
    pub base_score: f64,
    pub base_rank: usize,
}

/// Load a JSONL corpus: one `{"id","title","text"}` object per line.
pub fn load_corpus(path: &Path) -> Result<Vec<Entity>, RetrievalError> {
    let file =
        File::open(path).map_err(|e| RetrievalError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RetrievalError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Entity = serde_json::from_str(&line).map_err(|e| RetrievalError::CorpusFile {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if e.title.is_empty() {
            return Err(RetrievalError::CorpusFile {
                line: idx + 1,
                message: "entity title must be non-empty".to_string(),
            });
        }
        out.push(e);
    }
    Ok(out)
}

pub fn save_corpus(path: &Path, corpus: &[Entity]) -> Result<(), RetrievalError> {
    let f = File::create(path)
        .map_err(|e| RetrievalError::Io(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(f);
    for e in corpus {
        let json = serde_json::to_string(e).map_err(|e| RetrievalError::Io(e.to_string()))?;
        writeln!(w, "{json}").map_err(|e| RetrievalError::Io(e.to_string()))?;
    }
    Ok(())
}

/// Import a TREC-format run (`qid Q0 entity_id rank score tag`); per-query
/// lists are sorted by rank, truncated to `k`, and renumbered 1..k. When a
/// corpus id set is given, unknown entities are rejected.
pub fn import_run(
    path: &Path,
    k: usize,
    known_ids: Option<&HashSet<String>>,
) -> Result<BTreeMap<String, Vec<ScoredCandidate>>, RetrievalError> {
    let file =
        File::open(path).map_err(|e| RetrievalError::Io(format!("{}: {e}", path.display())))?;
    let mut per_query: BTreeMap<String, Vec<(usize, f64, String)>> = BTreeMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RetrievalError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(RetrievalError::MalformedRunLine {
                line: idx + 1,
                message: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let rank: usize = fields[3].parse().map_err(|e| RetrievalError::MalformedRunLine {
            line: idx + 1,
            message: format!("bad rank: {e}"),
        })?;
        let score: f64 = fields[4].parse().map_err(|e| RetrievalError::MalformedRunLine {
            line: idx + 1,
            message: format!("bad score: {e}"),
        })?;
        let entity_id = fields[2].to_string();
        if let Some(ids) = known_ids {
            if !ids.contains(&entity_id) {
                return Err(RetrievalError::UnknownEntityId(entity_id));
            }
        }
        per_query
            .entry(fields[0].to_string())
            .or_default()
            .push((rank, score, entity_id));
    }
    let mut out = BTreeMap::new();
    for (qid, mut rows) in per_query {
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        rows.truncate(k);
        out.insert(
            qid,
            rows.into_iter()
                .enumerate()
                .map(|(i, (_, score, entity_id))| ScoredCandidate {
                    entity_id,
                    base_score: score,
                    base_rank: i + 1,
                })
                .collect(),
        );
    }
    Ok(out)
}

/// Write a TREC run file. `tag_for` supplies the per-entry tag.
pub fn write_run<F>(
    path: &Path,
    runs: &BTreeMap<String, Vec<(String, f64)>>,
    mut tag_for: F,
) -> Result<(), RetrievalError>
where
    F: FnMut(&str, &str) -> String,
{
    let f = File::create(path)
        .map_err(|e| RetrievalError::Io(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(f);
    for (qid, entries) in runs {
        for (rank, (entity_id, score)) in entries.iter().enumerate() {
            writeln!(
                w,
                "{qid} Q0 {entity_id} {} {score} {}",
                rank + 1,
                tag_for(qid, entity_id)
            )
            .map_err(|e| RetrievalError::Io(e.to_string()))?;
        }
    }
    Ok(())
}
