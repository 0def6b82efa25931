//! Shared helpers for integration tests: a seeded random-formula
//! generator and an independent fuzzy evaluator used as a mutant.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use orlog::inference::PriorAssignment;
use orlog::logic::{Formula, PredicateId};

pub const ATOM_POOL: usize = 12;

pub fn pid(i: usize) -> PredicateId {
    PredicateId::new(format!("P{i}")).unwrap()
}

/// Random formula with at most `ATOM_POOL` distinct atoms and the given
/// remaining depth. Leaves are atoms; internal nodes are Not/And/Or.
pub fn random_formula(rng: &mut ChaCha8Rng, depth: usize) -> Formula {
    if depth == 0 || rng.gen_bool(0.3) {
        return Formula::Atom(pid(rng.gen_range(0..ATOM_POOL)));
    }
    match rng.gen_range(0..3) {
        0 => Formula::not(random_formula(rng, depth - 1)),
        1 => {
            let n = rng.gen_range(2..=4);
            Formula::and((0..n).map(|_| random_formula(rng, depth - 1)).collect())
        }
        _ => {
            let n = rng.gen_range(2..=4);
            Formula::or((0..n).map(|_| random_formula(rng, depth - 1)).collect())
        }
    }
}

/// Uniform priors over the formula's atoms.
pub fn random_priors(rng: &mut ChaCha8Rng, formula: &Formula) -> PriorAssignment {
    PriorAssignment::from_pairs(
        formula
            .atoms()
            .into_iter()
            .map(|a| (a, rng.gen_range(0.0..=1.0))),
    )
    .unwrap()
}

/// Deliberately wrong evaluator that treats every connective, including
/// disjunction, as an independent product (the "disjunction as
/// conjunction" failure mode). Used as a mutant that must NOT pass the
/// disjunction-separation check.
pub fn fuzzy_conjunctive_eval(f: &Formula, priors: &HashMap<PredicateId, f64>) -> f64 {
    match f {
        Formula::Atom(id) => priors[id],
        Formula::Not(inner) => 1.0 - fuzzy_conjunctive_eval(inner, priors),
        Formula::And(cs) | Formula::Or(cs) => {
            cs.iter().map(|c| fuzzy_conjunctive_eval(c, priors)).product()
        }
    }
}
