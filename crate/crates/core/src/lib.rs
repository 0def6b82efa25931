//! Constraint-aware entity retrieval.
//!
//! The pipeline retrieves candidate entities with BM25, reads a boolean
//! decomposition of the query (atomic predicates plus a logical form),
//! elicits a per-predicate plausibility score from a pluggable oracle,
//! computes each candidate's posterior probability of satisfying the form
//! by exact weighted model counting, and reranks by that posterior.
//! An evaluation harness (P/R/F1/NDCG/MRR, exact paired sign tests,
//! per-template breakdowns) and a token-cost ledger round out the toolkit.

pub mod config;
pub mod eval;
pub mod inference;
pub mod logic;
pub mod oracle;
pub mod pipeline;
pub mod retrieval;
pub mod synth;
