//! Predicate plausibility elicitation.
//!
//! For each (entity, predicate) pair a truth-valuation prompt is sent to a
//! backend, which answers either with raw logits for the True/False tokens
//! or with a probability directly. One prompt means exactly one backend
//! call; no free-form generation is involved anywhere.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logic::PredicateTemplate;
use crate::retrieval::Entity;

/// Default truth-inquiry suffix appended to every prompt.
pub const DEFAULT_SUFFIX: &str = "Is this predicate True or False?";

/// Default cap on context length, in characters.
pub const DEFAULT_CONTEXT_CAP: usize = 2000;

/// Knowledge access mode for prompt construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum PromptMode {
    /// Entity title only; the backend relies on parametric knowledge.
    Parametric,
    /// Title plus the entity's textual description as context.
    ParametricPlus,
}

impl PromptMode {
    pub fn tag(&self) -> &'static str {
        match self {
            PromptMode::Parametric => "param",
            PromptMode::ParametricPlus => "param+",
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// One truth-valuation request: optional context, entity title, the
/// instantiated predicate statement, and the truth-inquiry suffix.
/// The id fields identify the pair so table-driven backends can key on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthPrompt {
    pub entity_id: String,
    pub predicate_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub entity_title: String,
    pub predicate_text: String,
    pub suffix: String,
}

/// Result of `build_prompt`; `missing_description` flags a parametric_plus
/// request that fell back to parametric because the entity has no text.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltPrompt {
    pub prompt: TruthPrompt,
    pub missing_description: bool,
}

/// Assemble the truth-valuation prompt for an (entity, predicate) pair.
pub fn build_prompt(
    entity: &Entity,
    template: &PredicateTemplate,
    mode: PromptMode,
    suffix: &str,
    context_cap: usize,
) -> BuiltPrompt {
    let (context, missing_description) = match mode {
        PromptMode::Parametric => (None, false),
        PromptMode::ParametricPlus => {
            if entity.description.is_empty() {
                (None, true)
            } else {
                (Some(truncate_chars(&entity.description, context_cap)), false)
            }
        }
    };
    BuiltPrompt {
        prompt: TruthPrompt {
            entity_id: entity.id.clone(),
            predicate_id: template.id.to_string(),
            context,
            entity_title: entity.title.clone(),
            predicate_text: template.instantiate(&entity.title),
            suffix: suffix.to_string(),
        },
        missing_description,
    }
}

fn truncate_chars(s: &str, cap: usize) -> String {
    match s.char_indices().nth(cap) {
        Some((byte_idx, _)) => s[..byte_idx].to_string(),
        None => s.to_string(),
    }
}

/// Final-layer logits for the True and False tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitPair {
    pub z_true: f64,
    pub z_false: f64,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("non-finite logit: true={z_true}, false={z_false}")]
    NonFiniteLogit { z_true: f64, z_false: f64 },
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("mock table io: {0}")]
    MockTable(String),
}

/// Two-token softmax over the logit pair. Computed through the logistic of
/// the difference so |z| up to (and beyond) 700 cannot overflow.
pub fn score_from_logits(z: LogitPair) -> Result<f64, OracleError> {
    if !z.z_true.is_finite() || !z.z_false.is_finite() {
        return Err(OracleError::NonFiniteLogit {
            z_true: z.z_true,
            z_false: z.z_false,
        });
    }
    Ok(1.0 / (1.0 + (z.z_false - z.z_true).exp()))
}

/// A backend either exposes logits or a probability directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreResponse {
    Logits(LogitPair),
    Probability(f64),
}

/// Pluggable plausibility source. Implementations must be deterministic
/// for identical prompts within one run and safe for concurrent calls.
pub trait OracleBackend: Send + Sync {
    fn score(&self, prompt: &TruthPrompt) -> Result<ScoreResponse, OracleError>;
}

/// One backend call, normalized to a plausibility in [0,1].
pub fn elicit(backend: &dyn OracleBackend, prompt: &TruthPrompt) -> Result<f64, OracleError> {
    match backend.score(prompt)? {
        ScoreResponse::Logits(z) => score_from_logits(z),
        ScoreResponse::Probability(p) => {
            if (0.0..=1.0).contains(&p) {
                Ok(p)
            } else {
                Err(OracleError::MalformedResponse(format!(
                    "probability out of [0,1]: {p}"
                )))
            }
        }
    }
}

/// Lookup-table backend keyed by (entity_id, predicate_id), with an
/// optional default for misses. Immutable after load.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    table: HashMap<(String, String), f64>,
    default: Option<f64>,
}

impl MockBackend {
    pub fn new(table: HashMap<(String, String), f64>, default: Option<f64>) -> Self {
        MockBackend { table, default }
    }

    /// Load a TSV of `entity_id predicate_id prob` rows; a `* * prob` row
    /// sets the default for misses.
    pub fn from_tsv(path: &Path) -> Result<Self, OracleError> {
        let file =
            File::open(path).map_err(|e| OracleError::MockTable(format!("{}: {e}", path.display())))?;
        let mut table = HashMap::new();
        let mut default = None;
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| OracleError::MockTable(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (ent, pred, prob) = match (parts.next(), parts.next(), parts.next()) {
                (Some(e), Some(p), Some(v)) => (e, p, v),
                _ => {
                    return Err(OracleError::MockTable(format!(
                        "line {}: expected 3 tab-separated fields",
                        idx + 1
                    )))
                }
            };
            let prob: f64 = prob.parse().map_err(|e| {
                OracleError::MockTable(format!("line {}: bad probability: {e}", idx + 1))
            })?;
            if !(0.0..=1.0).contains(&prob) {
                return Err(OracleError::MockTable(format!(
                    "line {}: probability out of [0,1]: {prob}",
                    idx + 1
                )));
            }
            if ent == "*" && pred == "*" {
                default = Some(prob);
            } else {
                table.insert((ent.to_string(), pred.to_string()), prob);
            }
        }
        Ok(MockBackend { table, default })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl OracleBackend for MockBackend {
    fn score(&self, prompt: &TruthPrompt) -> Result<ScoreResponse, OracleError> {
        let key = (prompt.entity_id.clone(), prompt.predicate_id.clone());
        match self.table.get(&key).copied().or(self.default) {
            Some(p) => Ok(ScoreResponse::Probability(p)),
            None => Err(OracleError::BackendUnavailable(format!(
                "no mock entry for ({}, {}) and no default",
                prompt.entity_id, prompt.predicate_id
            ))),
        }
    }
}

/// Fixed-value backend, mostly for smoke tests and cost dry runs.
#[derive(Debug, Clone, Copy)]
pub struct ConstantBackend(pub f64);

impl OracleBackend for ConstantBackend {
    fn score(&self, _prompt: &TruthPrompt) -> Result<ScoreResponse, OracleError> {
        Ok(ScoreResponse::Probability(self.0))
    }
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    context: Option<&'a str>,
    entity_title: &'a str,
    predicate: &'a str,
    suffix: &'a str,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    logit_true: Option<f64>,
    logit_false: Option<f64>,
    prob_true: Option<f64>,
}

/// HTTP backend speaking the `/truth-eval` wire protocol: POST a JSON body
/// `{context?, entity_title, predicate, suffix}`, receive either
/// `{logit_true, logit_false}` or `{prob_true}`. A thin adapter in front
/// of any inference server makes it conform.
pub struct HttpBackend {
    endpoint: String,
    retries: u32,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(
        endpoint: impl Into<String>,
        retries: u32,
        timeout: Duration,
        api_key: Option<String>,
    ) -> Result<Self, OracleError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| OracleError::BackendUnavailable(e.to_string()))?;
        Ok(HttpBackend {
            endpoint: endpoint.into(),
            retries,
            client,
            api_key,
        })
    }

    fn call_once(&self, prompt: &TruthPrompt) -> Result<ScoreResponse, OracleError> {
        let body = WireRequest {
            context: prompt.context.as_deref(),
            entity_title: &prompt.entity_title,
            predicate: &prompt.predicate_text,
            suffix: &prompt.suffix,
        };
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| OracleError::BackendUnavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(OracleError::BackendUnavailable(format!(
                "http status {}",
                resp.status()
            )));
        }
        let wire: WireResponse = resp
            .json()
            .map_err(|e| OracleError::MalformedResponse(e.to_string()))?;
        match (wire.logit_true, wire.logit_false, wire.prob_true) {
            (Some(t), Some(f), _) => Ok(ScoreResponse::Logits(LogitPair {
                z_true: t,
                z_false: f,
            })),
            (_, _, Some(p)) => Ok(ScoreResponse::Probability(p)),
            _ => Err(OracleError::MalformedResponse(
                "expected {logit_true, logit_false} or {prob_true}".to_string(),
            )),
        }
    }
}

impl OracleBackend for HttpBackend {
    fn score(&self, prompt: &TruthPrompt) -> Result<ScoreResponse, OracleError> {
        let mut last = None;
        for _ in 0..=self.retries {
            match self.call_once(prompt) {
                Ok(r) => return Ok(r),
                Err(e @ OracleError::BackendUnavailable(_)) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.unwrap_or_else(|| OracleError::BackendUnavailable("no attempt made".into())))
    }
}
