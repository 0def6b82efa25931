//! Seeded synthetic fixtures: a desk-scale corpus of attribute-tagged
//! entities, queries over six structural templates (A&B, A&B&C, A&!B,
//! A&B&!C, A|B, A|B|C), qrels derived by exact formula evaluation over
//! the entity attribute sets, and a mock oracle table whose priors are
//! the gold labels perturbed by configurable noise.
//!
//! Everything is driven by one RNG seed; a fixed seed yields
//! byte-identical files.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::eval::{save_qrels, Qrels};
use crate::inference::eval_assignment;
use crate::logic::{parse_formula, LogicError, PredicateId, PredicateTemplate, QuerySpec};
use crate::retrieval::{save_corpus, Entity};

const ATTRIBUTES: &[&str] = &[
    "comedy", "fantasy", "parody", "mystery", "romance", "horror", "history", "science",
    "poetry", "adventure", "satire", "travel",
];

const TITLE_WORDS: &[&str] = &[
    "Chronicle", "Saga", "Anthology", "Compendium", "Gazette", "Almanac", "Primer", "Atlas",
    "Memoir", "Ledger",
];

/// The six structural templates, in report order.
pub const TEMPLATES: &[&str] = &["A&B", "A&B&C", "A&!B", "A&B&!C", "A|B", "A|B|C"];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub entities: usize,
    pub queries_per_template: usize,
    /// Mock priors are gold labels plus uniform noise in [-noise, noise],
    /// clamped to [0,1].
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            entities: 240,
            queries_per_template: 11,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("noise must be in [0,1], got {0}")]
    BadNoise(f64),
    #[error("need at least 2 entities and 1 query per template")]
    TooSmall,
    #[error("could not find a satisfiable query after {0} attempts")]
    Unsatisfiable(usize),
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error("io error: {0}")]
    Io(String),
}

/// A generated fixture, in memory.
#[derive(Debug)]
pub struct SynthFixture {
    pub corpus: Vec<Entity>,
    /// Attribute set per entity id, the generator's ground truth.
    pub attributes: HashMap<String, HashSet<String>>,
    pub queries: Vec<QuerySpec>,
    pub qrels: Qrels,
    /// entity_id, predicate_id, prior rows for the mock oracle table.
    pub mock_rows: Vec<(String, String, f64)>,
}

pub fn generate(config: &SynthConfig) -> Result<SynthFixture, SynthError> {
    if !(0.0..=1.0).contains(&config.noise) {
        return Err(SynthError::BadNoise(config.noise));
    }
    if config.entities < 2 || config.queries_per_template < 1 {
        return Err(SynthError::TooSmall);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let (corpus, attributes) = generate_corpus(config.entities, &mut rng);
    let (queries, qrels) = generate_queries(config, &attributes, &mut rng)?;
    let mock_rows = generate_mock_rows(config, &corpus, &attributes, &queries, &mut rng);

    Ok(SynthFixture {
        corpus,
        attributes,
        queries,
        qrels,
        mock_rows,
    })
}

fn generate_corpus(
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Entity>, HashMap<String, HashSet<String>>) {
    let mut corpus = Vec::with_capacity(n);
    let mut attributes = HashMap::with_capacity(n);
    for i in 0..n {
        let id = format!("E{i:04}");
        let mut attrs: Vec<&str> = Vec::new();
        while attrs.is_empty() {
            attrs = ATTRIBUTES
                .iter()
                .filter(|_| rng.gen_bool(0.4))
                .copied()
                .collect();
        }
        let title = format!("{} {i:04}", TITLE_WORDS[rng.gen_range(0..TITLE_WORDS.len())]);
        let description = format!(
            "{title} is a {} book. It explores {} themes throughout.",
            attrs.join(" "),
            attrs.join(", "),
        );
        attributes.insert(id.clone(), attrs.iter().map(|a| a.to_string()).collect());
        corpus.push(Entity {
            id,
            title,
            description,
        });
    }
    (corpus, attributes)
}

fn query_text(template: &str, attrs: &[&str]) -> String {
    match template {
        "A&B" => format!("{} {} books", attrs[0], attrs[1]),
        "A&B&C" => format!("{} {} {} books", attrs[0], attrs[1], attrs[2]),
        "A&!B" => format!("{} books that are not {}", attrs[0], attrs[1]),
        "A&B&!C" => format!("{} {} books that are not {}", attrs[0], attrs[1], attrs[2]),
        "A|B" => format!("{} or {} books", attrs[0], attrs[1]),
        "A|B|C" => format!("{} or {} or {} books", attrs[0], attrs[1], attrs[2]),
        _ => unreachable!("unknown template"),
    }
}

fn slot_count(template: &str) -> usize {
    template.matches(|c| c == 'A' || c == 'B' || c == 'C').count()
}

fn form_string(template: &str, ids: &[String]) -> String {
    match template {
        "A&B" => format!("{} & {}", ids[0], ids[1]),
        "A&B&C" => format!("{} & {} & {}", ids[0], ids[1], ids[2]),
        "A&!B" => format!("{} & !{}", ids[0], ids[1]),
        "A&B&!C" => format!("{} & {} & !{}", ids[0], ids[1], ids[2]),
        "A|B" => format!("{} | {}", ids[0], ids[1]),
        "A|B|C" => format!("{} | {} | {}", ids[0], ids[1], ids[2]),
        _ => unreachable!("unknown template"),
    }
}

fn generate_queries(
    config: &SynthConfig,
    attributes: &HashMap<String, HashSet<String>>,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<QuerySpec>, Qrels), SynthError> {
    const MAX_TRIES: usize = 500;
    let mut queries = Vec::new();
    let mut qrels = Qrels::new();
    let mut qnum = 0usize;
    for template in TEMPLATES {
        for _ in 0..config.queries_per_template {
            let slots = slot_count(template);
            let mut chosen: Option<(Vec<&str>, QuerySpec, HashSet<String>)> = None;
            for attempt in 0..MAX_TRIES {
                let attrs: Vec<&str> = ATTRIBUTES
                    .choose_multiple(rng, slots)
                    .copied()
                    .collect();
                let qid = format!("q{qnum:03}");
                // Predicate ids are globally unique so one mock table can
                // serve every query in the run.
                let pred_ids: Vec<String> = (0..slots)
                    .map(|s| format!("Q{qnum:03}{}", (b'A' + s as u8) as char))
                    .collect();
                let form = parse_formula(&form_string(template, &pred_ids))?;
                let predicates = attrs
                    .iter()
                    .zip(&pred_ids)
                    .map(|(attr, id)| {
                        PredicateTemplate::new(
                            PredicateId::new(id.clone())?,
                            format!("{{e}} is a {attr} book"),
                        )
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let gold = gold_set(&form, &attrs, &pred_ids, attributes);
                // keep queries satisfiable but not saturated; disjunctions
                // inherently match most of the corpus, so their cap is looser
                let cap = if template.contains('|') {
                    attributes.len() * 9 / 10
                } else {
                    attributes.len() / 2
                };
                if gold.len() >= 2 && gold.len() <= cap {
                    let parse_tokens = rng.gen_range(15..45);
                    let spec = QuerySpec::new(
                        qid,
                        query_text(template, &attrs),
                        predicates,
                        form,
                        Some(template.to_string()),
                        parse_tokens,
                    )?;
                    chosen = Some((attrs, spec, gold));
                    break;
                }
                if attempt + 1 == MAX_TRIES {
                    return Err(SynthError::Unsatisfiable(MAX_TRIES));
                }
            }
            let (_, spec, gold) = chosen.expect("loop either chooses or errors");
            qrels.insert(spec.qid.clone(), gold);
            queries.push(spec);
            qnum += 1;
        }
    }
    Ok((queries, qrels))
}

fn gold_set(
    form: &crate::logic::Formula,
    attrs: &[&str],
    pred_ids: &[String],
    attributes: &HashMap<String, HashSet<String>>,
) -> HashSet<String> {
    let mut gold = HashSet::new();
    for (entity_id, entity_attrs) in attributes {
        let assignment: HashMap<PredicateId, bool> = attrs
            .iter()
            .zip(pred_ids)
            .map(|(attr, id)| {
                (
                    PredicateId::new(id.clone()).expect("generated ids are valid"),
                    entity_attrs.contains(*attr),
                )
            })
            .collect();
        if eval_assignment(form, &assignment).expect("assignment covers all atoms") {
            gold.insert(entity_id.clone());
        }
    }
    gold
}

fn generate_mock_rows(
    config: &SynthConfig,
    corpus: &[Entity],
    attributes: &HashMap<String, HashSet<String>>,
    queries: &[QuerySpec],
    rng: &mut ChaCha8Rng,
) -> Vec<(String, String, f64)> {
    // attribute word per predicate id, recovered from the template text
    let mut rows = Vec::new();
    for q in queries {
        for p in &q.predicates {
            let attr = p
                .text
                .strip_prefix("{e} is a ")
                .and_then(|s| s.strip_suffix(" book"))
                .expect("generated template shape");
            for e in corpus {
                let gold = attributes[&e.id].contains(attr) as u8 as f64;
                let prior = if config.noise == 0.0 {
                    gold
                } else {
                    (gold + rng.gen_range(-config.noise..=config.noise)).clamp(0.0, 1.0)
                };
                rows.push((e.id.clone(), p.id.to_string(), prior));
            }
        }
    }
    rows
}

impl SynthFixture {
    /// Write corpus.jsonl, queries.jsonl, qrels.txt, and oracle.tsv into
    /// `dir`. Overwrites deterministically.
    pub fn write_all(&self, dir: &Path) -> Result<(), SynthError> {
        use std::io::Write;
        std::fs::create_dir_all(dir).map_err(|e| SynthError::Io(e.to_string()))?;
        save_corpus(&dir.join("corpus.jsonl"), &self.corpus)
            .map_err(|e| SynthError::Io(e.to_string()))?;
        crate::logic::save_queries(&dir.join("queries.jsonl"), &self.queries)?;
        save_qrels(&dir.join("qrels.txt"), &self.qrels)
            .map_err(|e| SynthError::Io(e.to_string()))?;
        let mut f = std::fs::File::create(dir.join("oracle.tsv"))
            .map_err(|e| SynthError::Io(e.to_string()))?;
        for (entity_id, predicate_id, prior) in &self.mock_rows {
            writeln!(f, "{entity_id}\t{predicate_id}\t{prior}")
                .map_err(|e| SynthError::Io(e.to_string()))?;
        }
        writeln!(f, "*\t*\t0.5").map_err(|e| SynthError::Io(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_seed() {
        let config = SynthConfig {
            entities: 40,
            queries_per_template: 2,
            ..Default::default()
        };
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.queries, b.queries);
        assert_eq!(a.qrels, b.qrels);
        assert_eq!(a.mock_rows, b.mock_rows);

        let c = generate(&SynthConfig { seed: 7, ..config }).unwrap();
        assert_ne!(a.corpus, c.corpus);
    }

    #[test]
    fn covers_all_templates_with_satisfiable_gold() {
        let fixture = generate(&SynthConfig {
            entities: 120,
            queries_per_template: 3,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(fixture.queries.len(), 18);
        for t in TEMPLATES {
            assert_eq!(
                fixture
                    .queries
                    .iter()
                    .filter(|q| q.template_label.as_deref() == Some(*t))
                    .count(),
                3
            );
        }
        for q in &fixture.queries {
            assert!(fixture.qrels[&q.qid].len() >= 2, "{} has thin gold", q.qid);
        }
    }

    #[test]
    fn zero_noise_priors_are_gold_labels() {
        let fixture = generate(&SynthConfig {
            entities: 30,
            queries_per_template: 1,
            noise: 0.0,
            ..Default::default()
        })
        .unwrap();
        for (_, _, prior) in &fixture.mock_rows {
            assert!(*prior == 0.0 || *prior == 1.0);
        }
    }

    #[test]
    fn noise_stays_near_gold() {
        let fixture = generate(&SynthConfig {
            entities: 30,
            queries_per_template: 1,
            noise: 0.2,
            ..Default::default()
        })
        .unwrap();
        for (_, _, prior) in &fixture.mock_rows {
            assert!((0.0..=1.0).contains(prior));
            // every prior is within 0.2 of a gold label
            assert!(*prior <= 0.2 || *prior >= 0.8);
        }
        assert!(matches!(
            generate(&SynthConfig {
                noise: 1.5,
                ..Default::default()
            }),
            Err(SynthError::BadNoise(_))
        ));
    }

    #[test]
    fn files_roundtrip_and_are_byte_stable() {
        let config = SynthConfig {
            entities: 25,
            queries_per_template: 1,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let d1 = dir.path().join("one");
        let d2 = dir.path().join("two");
        generate(&config).unwrap().write_all(&d1).unwrap();
        generate(&config).unwrap().write_all(&d2).unwrap();
        for name in ["corpus.jsonl", "queries.jsonl", "qrels.txt", "oracle.tsv"] {
            let a = std::fs::read(d1.join(name)).unwrap();
            let b = std::fs::read(d2.join(name)).unwrap();
            assert_eq!(a, b, "{name} not byte-identical");
        }
        // and the written queries parse back
        let loaded = crate::logic::load_queries(&d1.join("queries.jsonl")).unwrap();
        assert_eq!(loaded.len(), 6);
    }
}
