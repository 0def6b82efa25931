//! Exact posterior computation over weighted boolean formulas.
//!
//! Each atomic predicate carries an independent prior weight in `[0,1]`.
//! The posterior of a formula is the sum, over all satisfying truth
//! assignments, of the product of per-atom weights (`w` for true,
//! `1 - w` for false). A shared atom takes one consistent value across
//! all of its occurrences, which is what separates model counting from
//! naive fuzzy evaluation: `A | !A` is exactly 1 regardless of the prior.
//!
//! `posterior` runs memoized Shannon expansion; `posterior_bruteforce`
//! enumerates all `2^n` assignments and exists purely as an independent
//! oracle for tests.

use std::collections::HashMap;
use std::rc::Rc;

use thiserror::Error;

use crate::logic::{Formula, PredicateId};

/// Map from predicate to its prior plausibility weight.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorAssignment {
    weights: HashMap<PredicateId, f64>,
}

impl PriorAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, id: PredicateId, weight: f64) -> Result<(), InferenceError> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(InferenceError::InvalidPrior { id, weight });
        }
        self.weights.insert(id, weight);
        Ok(())
    }

    pub fn get(&self, id: &PredicateId) -> Option<f64> {
        self.weights.get(id).copied()
    }

    pub fn from_pairs(
        pairs: impl IntoIterator<Item = (PredicateId, f64)>,
    ) -> Result<Self, InferenceError> {
        let mut p = Self::new();
        for (id, w) in pairs {
            p.set(id, w)?;
        }
        Ok(p)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum InferenceError {
    #[error("no prior for predicate {0}")]
    MissingPrior(PredicateId),
    #[error("prior for {id} out of [0,1]: {weight}")]
    InvalidPrior { id: PredicateId, weight: f64 },
    #[error("formula has {count} atoms, brute-force cap is {cap}")]
    TooManyAtoms { count: usize, cap: usize },
    #[error("no truth value for predicate {0}")]
    MissingAssignment(PredicateId),
}

/// Standard boolean evaluation of `f` under a complete truth assignment.
pub fn eval_assignment(
    f: &Formula,
    assignment: &HashMap<PredicateId, bool>,
) -> Result<bool, InferenceError> {
    match f {
        Formula::Atom(id) => assignment
            .get(id)
            .copied()
            .ok_or_else(|| InferenceError::MissingAssignment(id.clone())),
        Formula::Not(inner) => Ok(!eval_assignment(inner, assignment)?),
        Formula::And(cs) => {
            let mut v = true;
            for c in cs {
                v &= eval_assignment(c, assignment)?;
            }
            Ok(v)
        }
        Formula::Or(cs) => {
            let mut v = false;
            for c in cs {
                v |= eval_assignment(c, assignment)?;
            }
            Ok(v)
        }
    }
}

// Internal node form with boolean constants so cofactors fold as they are
// built. Atoms are indices into the first-occurrence atom order.
#[derive(Debug, PartialEq, Eq, Hash)]
enum Node {
    True,
    False,
    Atom(usize),
    Not(Rc<Node>),
    And(Vec<Rc<Node>>),
    Or(Vec<Rc<Node>>),
}

fn lower(f: &Formula, index: &HashMap<PredicateId, usize>) -> Rc<Node> {
    match f {
        Formula::Atom(id) => Rc::new(Node::Atom(index[id])),
        Formula::Not(inner) => Rc::new(Node::Not(lower(inner, index))),
        Formula::And(cs) => Rc::new(Node::And(cs.iter().map(|c| lower(c, index)).collect())),
        Formula::Or(cs) => Rc::new(Node::Or(cs.iter().map(|c| lower(c, index)).collect())),
    }
}

// Substitute `value` for atom `var` and constant-fold.
fn restrict(node: &Rc<Node>, var: usize, value: bool) -> Rc<Node> {
    match node.as_ref() {
        Node::True | Node::False => Rc::clone(node),
        Node::Atom(v) => {
            if *v == var {
                Rc::new(if value { Node::True } else { Node::False })
            } else {
                Rc::clone(node)
            }
        }
        Node::Not(inner) => {
            let r = restrict(inner, var, value);
            match r.as_ref() {
                Node::True => Rc::new(Node::False),
                Node::False => Rc::new(Node::True),
                Node::Not(grand) => Rc::clone(grand),
                _ => Rc::new(Node::Not(r)),
            }
        }
        Node::And(cs) => {
            let mut kids = Vec::with_capacity(cs.len());
            for c in cs {
                let r = restrict(c, var, value);
                match r.as_ref() {
                    Node::False => return Rc::new(Node::False),
                    Node::True => {}
                    _ => kids.push(r),
                }
            }
            match kids.len() {
                0 => Rc::new(Node::True),
                1 => kids.pop().unwrap(),
                _ => Rc::new(Node::And(kids)),
            }
        }
        Node::Or(cs) => {
            let mut kids = Vec::with_capacity(cs.len());
            for c in cs {
                let r = restrict(c, var, value);
                match r.as_ref() {
                    Node::True => return Rc::new(Node::True),
                    Node::False => {}
                    _ => kids.push(r),
                }
            }
            match kids.len() {
                0 => Rc::new(Node::False),
                1 => kids.pop().unwrap(),
                _ => Rc::new(Node::Or(kids)),
            }
        }
    }
}

// Smallest atom index still free in the node, if any.
fn min_atom(node: &Node) -> Option<usize> {
    match node {
        Node::True | Node::False => None,
        Node::Atom(v) => Some(*v),
        Node::Not(inner) => min_atom(inner),
        Node::And(cs) | Node::Or(cs) => cs.iter().filter_map(|c| min_atom(c)).min(),
    }
}

fn shannon(node: &Rc<Node>, weights: &[f64], memo: &mut HashMap<Rc<Node>, f64>) -> f64 {
    match node.as_ref() {
        Node::True => return 1.0,
        Node::False => return 0.0,
        _ => {}
    }
    if let Some(&v) = memo.get(node) {
        return v;
    }
    let var = min_atom(node).expect("non-constant node has a free atom");
    let p = weights[var];
    let hi = shannon(&restrict(node, var, true), weights, memo);
    let lo = shannon(&restrict(node, var, false), weights, memo);
    let v = p * hi + (1.0 - p) * lo;
    memo.insert(Rc::clone(node), v);
    v
}

/// Posterior probability that the formula holds, by memoized Shannon
/// expansion in first-occurrence atom order. Exact up to float rounding;
/// priors of exactly 0 or 1 are legal and handled exactly.
pub fn posterior(f: &Formula, priors: &PriorAssignment) -> Result<f64, InferenceError> {
    let atoms = f.atoms();
    let mut weights = Vec::with_capacity(atoms.len());
    let mut index = HashMap::with_capacity(atoms.len());
    for (i, a) in atoms.iter().enumerate() {
        let w = priors
            .get(a)
            .ok_or_else(|| InferenceError::MissingPrior(a.clone()))?;
        weights.push(w);
        index.insert(a.clone(), i);
    }
    let node = lower(f, &index);
    let mut memo = HashMap::new();
    Ok(shannon(&node, &weights, &mut memo))
}

/// Brute-force cap on the atom count: 2^24 assignments.
pub const BRUTE_FORCE_MAX_ATOMS: usize = 24;

/// Independent oracle: enumerate every assignment explicitly and sum the
/// weights of those satisfying `f`. Shares no code with `posterior`
/// beyond `eval_assignment`.
pub fn posterior_bruteforce(f: &Formula, priors: &PriorAssignment) -> Result<f64, InferenceError> {
    let atoms = f.atoms();
    if atoms.len() > BRUTE_FORCE_MAX_ATOMS {
        return Err(InferenceError::TooManyAtoms {
            count: atoms.len(),
            cap: BRUTE_FORCE_MAX_ATOMS,
        });
    }
    let mut weights = Vec::with_capacity(atoms.len());
    for a in &atoms {
        weights.push(
            priors
                .get(a)
                .ok_or_else(|| InferenceError::MissingPrior(a.clone()))?,
        );
    }
    let mut total = 0.0;
    let mut assignment: HashMap<PredicateId, bool> =
        atoms.iter().map(|a| (a.clone(), false)).collect();
    for mask in 0u32..(1u32 << atoms.len()) {
        for (i, a) in atoms.iter().enumerate() {
            *assignment.get_mut(a).expect("atom present") = mask >> i & 1 == 1;
        }
        if eval_assignment(f, &assignment)? {
            let mut w = 1.0;
            for (i, wi) in weights.iter().enumerate() {
                w *= if mask >> i & 1 == 1 { *wi } else { 1.0 - *wi };
            }
            total += w;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::parse_formula;

    fn pid(s: &str) -> PredicateId {
        PredicateId::new(s).unwrap()
    }

    fn priors(pairs: &[(&str, f64)]) -> PriorAssignment {
        PriorAssignment::from_pairs(pairs.iter().map(|(s, w)| (pid(s), *w))).unwrap()
    }

    #[test]
    fn conjunction_is_product() {
        let f = parse_formula("A & B").unwrap();
        let w = priors(&[("A", 0.9), ("B", 0.8)]);
        assert!((posterior(&f, &w).unwrap() - 0.72).abs() < 1e-15);
    }

    #[test]
    fn tautology_is_one() {
        let f = parse_formula("A | !A").unwrap();
        for p in [0.0, 0.3, 0.5, 0.77, 1.0] {
            let w = priors(&[("A", p)]);
            assert_eq!(posterior(&f, &w).unwrap(), 1.0);
        }
    }

    #[test]
    fn contradiction_is_zero() {
        let f = parse_formula("A & !A").unwrap();
        let w = priors(&[("A", 0.6)]);
        assert_eq!(posterior(&f, &w).unwrap(), 0.0);
    }

    #[test]
    fn disjunction_marginalizes() {
        let f = parse_formula("A | B").unwrap();
        let w = priors(&[("A", 0.6), ("B", 0.5)]);
        // 0.6*0.5 + 0.6*0.5 + 0.4*0.5
        assert!((posterior(&f, &w).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn negated_conjunct() {
        let f = parse_formula("A & B & !C").unwrap();
        let w = priors(&[("A", 0.9), ("B", 0.8), ("C", 0.3)]);
        assert!((posterior(&f, &w).unwrap() - 0.504).abs() < 1e-15);
    }

    #[test]
    fn missing_prior_reported() {
        let f = parse_formula("A & B").unwrap();
        let w = priors(&[("A", 0.9)]);
        assert_eq!(
            posterior(&f, &w).unwrap_err(),
            InferenceError::MissingPrior(pid("B"))
        );
        assert_eq!(
            posterior_bruteforce(&f, &w).unwrap_err(),
            InferenceError::MissingPrior(pid("B"))
        );
    }

    #[test]
    fn invalid_prior_rejected() {
        let mut w = PriorAssignment::new();
        assert!(w.set(pid("A"), 1.2).is_err());
        assert!(w.set(pid("A"), -0.1).is_err());
        assert!(w.set(pid("A"), 0.0).is_ok());
        assert!(w.set(pid("A"), 1.0).is_ok());
    }

    #[test]
    fn bruteforce_fixtures() {
        let f = parse_formula("A").unwrap();
        let w = priors(&[("A", 0.25)]);
        assert_eq!(posterior_bruteforce(&f, &w).unwrap(), 0.25);

        let f = parse_formula("A | B | C").unwrap();
        let w = priors(&[("A", 0.5), ("B", 0.5), ("C", 0.5)]);
        assert!((posterior_bruteforce(&f, &w).unwrap() - 0.875).abs() < 1e-15);

        for text in ["A & B", "A | !A", "A | B"] {
            let f = parse_formula(text).unwrap();
            let w = priors(&[("A", 0.9), ("B", 0.8)]);
            let a = posterior(&f, &w).unwrap();
            let b = posterior_bruteforce(&f, &w).unwrap();
            assert!((a - b).abs() <= 1e-12, "{text}: {a} vs {b}");
        }
    }

    #[test]
    fn bruteforce_cap() {
        let ids: Vec<String> = (0..25).map(|i| format!("P{i}")).collect();
        let f = parse_formula(&ids.join(" & ")).unwrap();
        let w = priors(&ids.iter().map(|s| (s.as_str(), 0.5)).collect::<Vec<_>>());
        assert!(matches!(
            posterior_bruteforce(&f, &w),
            Err(InferenceError::TooManyAtoms { count: 25, cap: 24 })
        ));
    }

    #[test]
    fn eval_assignment_basics() {
        let mut a = HashMap::new();
        a.insert(pid("A"), true);
        a.insert(pid("B"), false);
        a.insert(pid("C"), true);
        assert!(!eval_assignment(&parse_formula("A & B").unwrap(), &a).unwrap());
        assert!(eval_assignment(&parse_formula("!B").unwrap(), &a).unwrap());
        assert!(eval_assignment(&parse_formula("A & (B | C)").unwrap(), &a).unwrap());
        assert_eq!(
            eval_assignment(&parse_formula("D").unwrap(), &a).unwrap_err(),
            InferenceError::MissingAssignment(pid("D"))
        );
    }

    #[test]
    fn degenerate_priors_match_boolean_eval() {
        let f = parse_formula("A & (B | !C)").unwrap();
        for mask in 0..8u32 {
            let vals = [(mask & 1) == 1, (mask & 2) == 2, (mask & 4) == 4];
            let w = priors(&[
                ("A", vals[0] as u8 as f64),
                ("B", vals[1] as u8 as f64),
                ("C", vals[2] as u8 as f64),
            ]);
            let assignment: HashMap<_, _> = [
                (pid("A"), vals[0]),
                (pid("B"), vals[1]),
                (pid("C"), vals[2]),
            ]
            .into();
            let expect = eval_assignment(&f, &assignment).unwrap();
            assert_eq!(posterior(&f, &w).unwrap(), expect as u8 as f64);
        }
    }

    #[test]
    fn shared_atoms_stay_consistent() {
        // (A & B) | (!A & C): the two branches are mutually exclusive in A.
        let f = parse_formula("(A & B) | (!A & C)").unwrap();
        let w = priors(&[("A", 0.3), ("B", 0.6), ("C", 0.9)]);
        let expect = 0.3 * 0.6 + 0.7 * 0.9;
        assert!((posterior(&f, &w).unwrap() - expect).abs() < 1e-15);
        assert!((posterior_bruteforce(&f, &w).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn nnf_invariant() {
        let f = parse_formula("!(A & (B | !C))").unwrap();
        let w = priors(&[("A", 0.2), ("B", 0.7), ("C", 0.4)]);
        let a = posterior(&f, &w).unwrap();
        let b = posterior(&f.to_nnf(), &w).unwrap();
        assert!((a - b).abs() <= 1e-15);
        // complement law
        let pos = posterior(&parse_formula("A & (B | !C)").unwrap(), &w).unwrap();
        assert!((a - (1.0 - pos)).abs() <= 1e-15);
    }
}
