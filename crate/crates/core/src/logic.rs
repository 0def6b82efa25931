//! Boolean logical forms over atomic predicates.
//!
//! A query decomposition names a set of atomic predicates (each a factual
//! statement about an entity) and combines them with `&`, `|`, and `!`.
//! The concrete syntax is `expr := term ('|' term)*`, `term := factor
//! ('&' factor)*`, `factor := '!' factor | '(' expr ')' | IDENT`, with
//! `!` binding tightest and `&` tighter than `|`. Chains of the same
//! connective are flattened into n-ary nodes so structural equality is
//! canonical.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque identifier of an atomic predicate, e.g. `A` or `P1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredicateId(String);

impl PredicateId {
    /// Validates `[A-Za-z][A-Za-z0-9_]*`.
    pub fn new(id: impl Into<String>) -> Result<Self, LogicError> {
        let id = id.into();
        let mut chars = id.chars();
        let head_ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic());
        let tail_ok = chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
        if head_ok && tail_ok {
            Ok(PredicateId(id))
        } else {
            Err(LogicError::InvalidPredicateId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PredicateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Boolean formula tree. `And`/`Or` children lists always have length >= 2.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    Atom(PredicateId),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    pub fn atom(id: PredicateId) -> Formula {
        Formula::Atom(id)
    }

    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    /// n-ary conjunction; flattens nested `And`s and unwraps a single child.
    pub fn and(children: Vec<Formula>) -> Formula {
        Self::nary(children, true)
    }

    /// n-ary disjunction; flattens nested `Or`s and unwraps a single child.
    pub fn or(children: Vec<Formula>) -> Formula {
        Self::nary(children, false)
    }

    fn nary(children: Vec<Formula>, conj: bool) -> Formula {
        let mut flat = Vec::with_capacity(children.len());
        for c in children {
            match (conj, c) {
                (true, Formula::And(grand)) => flat.extend(grand),
                (false, Formula::Or(grand)) => flat.extend(grand),
                (_, other) => flat.push(other),
            }
        }
        match flat.len() {
            0 => panic!("empty connective"),
            1 => flat.pop().unwrap(),
            _ if conj => Formula::And(flat),
            _ => Formula::Or(flat),
        }
    }

    /// Deduplicated atoms in first-occurrence order.
    pub fn atoms(&self) -> Vec<PredicateId> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        self.collect_atoms(&mut seen, &mut out);
        out
    }

    fn collect_atoms(&self, seen: &mut HashSet<PredicateId>, out: &mut Vec<PredicateId>) {
        match self {
            Formula::Atom(id) => {
                if seen.insert(id.clone()) {
                    out.push(id.clone());
                }
            }
            Formula::Not(inner) => inner.collect_atoms(seen, out),
            Formula::And(cs) | Formula::Or(cs) => {
                for c in cs {
                    c.collect_atoms(seen, out);
                }
            }
        }
    }

    /// Negation normal form: negations pushed to atoms via De Morgan,
    /// double negations eliminated. Logically equivalent to `self`.
    pub fn to_nnf(&self) -> Formula {
        self.nnf(false)
    }

    fn nnf(&self, negated: bool) -> Formula {
        match self {
            Formula::Atom(id) => {
                let a = Formula::Atom(id.clone());
                if negated {
                    Formula::not(a)
                } else {
                    a
                }
            }
            Formula::Not(inner) => inner.nnf(!negated),
            Formula::And(cs) => {
                let kids = cs.iter().map(|c| c.nnf(negated)).collect();
                if negated {
                    Formula::or(kids)
                } else {
                    Formula::and(kids)
                }
            }
            Formula::Or(cs) => {
                let kids = cs.iter().map(|c| c.nnf(negated)).collect();
                if negated {
                    Formula::and(kids)
                } else {
                    Formula::or(kids)
                }
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Formula::Atom(_) | Formula::Not(_) => 3,
            Formula::And(_) => 2,
            Formula::Or(_) => 1,
        }
    }
}

/// Canonical printing in the DSL syntax; `parse_formula` round-trips it.
impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn write_child(f: &mut fmt::Formatter<'_>, child: &Formula, parent_prec: u8) -> fmt::Result {
            if child.precedence() < parent_prec {
                write!(f, "({child})")
            } else {
                write!(f, "{child}")
            }
        }
        match self {
            Formula::Atom(id) => write!(f, "{id}"),
            Formula::Not(inner) => {
                f.write_str("!")?;
                write_child(f, inner, 3)
            }
            Formula::And(cs) => {
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" & ")?;
                    }
                    write_child(f, c, 2)?;
                }
                Ok(())
            }
            Formula::Or(cs) => {
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" | ")?;
                    }
                    write_child(f, c, 1)?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LogicError {
    #[error("empty formula")]
    EmptyFormula,
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("invalid predicate id: {0:?}")]
    InvalidPredicateId(String),
    #[error("predicate template must contain exactly one {{e}} placeholder: {0:?}")]
    BadPlaceholder(String),
    #[error("query {qid}: formula atom {atom} has no declared predicate")]
    UndeclaredAtom { qid: String, atom: String },
    #[error("query {qid}: predicate {id} never appears in the formula")]
    UnusedPredicate { qid: String, id: String },
    #[error("query {qid}: duplicate predicate id {id}")]
    DuplicatePredicate { qid: String, id: String },
    #[error("query file line {line}: {message}")]
    QueryFile { line: usize, message: String },
    #[error("io error: {0}")]
    Io(String),
}

/// Parse the DSL. Whitespace is insignificant; `&` binds tighter than `|`,
/// `!` tightest. Same-operator chains come back flattened.
pub fn parse_formula(text: &str) -> Result<Formula, LogicError> {
    let mut p = Parser {
        bytes: text.as_bytes(),
        pos: 0,
    };
    p.skip_ws();
    if p.at_end() {
        return Err(LogicError::EmptyFormula);
    }
    let f = p.expr()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(f)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|b| b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn err(&self, message: &str) -> LogicError {
        LogicError::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn expr(&mut self) -> Result<Formula, LogicError> {
        let mut terms = vec![self.term()?];
        loop {
            self.skip_ws();
            if self.peek() == Some(b'|') {
                self.pos += 1;
                terms.push(self.term()?);
            } else {
                break;
            }
        }
        Ok(Formula::or(terms))
    }

    fn term(&mut self) -> Result<Formula, LogicError> {
        let mut factors = vec![self.factor()?];
        loop {
            self.skip_ws();
            if self.peek() == Some(b'&') {
                self.pos += 1;
                factors.push(self.factor()?);
            } else {
                break;
            }
        }
        Ok(Formula::and(factors))
    }

    fn factor(&mut self) -> Result<Formula, LogicError> {
        self.skip_ws();
        match self.peek() {
            Some(b'!') => {
                self.pos += 1;
                Ok(Formula::not(self.factor()?))
            }
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.skip_ws();
                if self.peek() == Some(b')') {
                    self.pos += 1;
                    Ok(inner)
                } else {
                    Err(self.err("expected ')'"))
                }
            }
            Some(b) if b.is_ascii_alphabetic() => self.ident(),
            Some(_) => Err(self.err("expected '!', '(' or identifier")),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn ident(&mut self) -> Result<Formula, LogicError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|b| b.is_ascii_alphanumeric() || b == b'_')
        {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii ident");
        Ok(Formula::Atom(PredicateId::new(text)?))
    }
}

/// Natural-language statement about an entity with a `{e}` placeholder,
/// e.g. `"{e} is a comedy book"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateTemplate {
    pub id: PredicateId,
    pub text: String,
}

impl PredicateTemplate {
    pub fn new(id: PredicateId, text: impl Into<String>) -> Result<Self, LogicError> {
        let text = text.into();
        if text.matches("{e}").count() != 1 {
            return Err(LogicError::BadPlaceholder(text));
        }
        Ok(PredicateTemplate { id, text })
    }

    /// Substitute the entity title for `{e}`, verbatim, no escaping.
    pub fn instantiate(&self, entity_title: &str) -> String {
        self.text.replacen("{e}", entity_title, 1)
    }
}

/// A query plus its decomposition: predicate templates and logical form.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    pub qid: String,
    pub raw: String,
    pub predicates: Vec<PredicateTemplate>,
    pub form: Formula,
    /// Structural tag such as `A&!B`; free-form.
    pub template_label: Option<String>,
    /// One-off token cost of producing the decomposition; 0 for
    /// file-supplied parses unless the file overrides it.
    pub parse_tokens: u64,
}

impl QuerySpec {
    pub fn new(
        qid: impl Into<String>,
        raw: impl Into<String>,
        predicates: Vec<PredicateTemplate>,
        form: Formula,
        template_label: Option<String>,
        parse_tokens: u64,
    ) -> Result<Self, LogicError> {
        let q = QuerySpec {
            qid: qid.into(),
            raw: raw.into(),
            predicates,
            form,
            template_label,
            parse_tokens,
        };
        q.validate()?;
        Ok(q)
    }

    /// Atoms of the form must all be declared, every declared predicate
    /// must appear in the form, and ids must be unique within the query.
    pub fn validate(&self) -> Result<(), LogicError> {
        let mut declared = HashSet::new();
        for p in &self.predicates {
            if !declared.insert(p.id.clone()) {
                return Err(LogicError::DuplicatePredicate {
                    qid: self.qid.clone(),
                    id: p.id.to_string(),
                });
            }
        }
        let atoms: HashSet<_> = self.form.atoms().into_iter().collect();
        for a in &atoms {
            if !declared.contains(a) {
                return Err(LogicError::UndeclaredAtom {
                    qid: self.qid.clone(),
                    atom: a.to_string(),
                });
            }
        }
        for p in &self.predicates {
            if !atoms.contains(&p.id) {
                return Err(LogicError::UnusedPredicate {
                    qid: self.qid.clone(),
                    id: p.id.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn template(&self, id: &PredicateId) -> Option<&PredicateTemplate> {
        self.predicates.iter().find(|p| &p.id == id)
    }
}

/// On-disk query record, one JSON object per line.
#[derive(Debug, Serialize, Deserialize)]
struct QueryRecord {
    qid: String,
    text: String,
    form: String,
    predicates: Vec<PredicateRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parse_tokens: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredicateRecord {
    id: String,
    text: String,
}

/// Load a JSONL query file; blank lines are skipped.
pub fn load_queries(path: &Path) -> Result<Vec<QuerySpec>, LogicError> {
    let file = File::open(path).map_err(|e| LogicError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| LogicError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: QueryRecord = serde_json::from_str(&line).map_err(|e| LogicError::QueryFile {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let form = parse_formula(&rec.form).map_err(|e| LogicError::QueryFile {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let mut predicates = Vec::with_capacity(rec.predicates.len());
        for p in rec.predicates {
            predicates.push(PredicateTemplate::new(PredicateId::new(p.id)?, p.text)?);
        }
        out.push(QuerySpec::new(
            rec.qid,
            rec.text,
            predicates,
            form,
            rec.template,
            rec.parse_tokens.unwrap_or(0),
        )?);
    }
    Ok(out)
}

/// Write queries as JSONL in the same schema `load_queries` reads.
pub fn save_queries(path: &Path, queries: &[QuerySpec]) -> Result<(), LogicError> {
    use std::io::Write;
    let mut f =
        File::create(path).map_err(|e| LogicError::Io(format!("{}: {e}", path.display())))?;
    for q in queries {
        let rec = QueryRecord {
            qid: q.qid.clone(),
            text: q.raw.clone(),
            form: q.form.to_string(),
            predicates: q
                .predicates
                .iter()
                .map(|p| PredicateRecord {
                    id: p.id.to_string(),
                    text: p.text.clone(),
                })
                .collect(),
            template: q.template_label.clone(),
            parse_tokens: (q.parse_tokens > 0).then_some(q.parse_tokens),
        };
        let json = serde_json::to_string(&rec).map_err(|e| LogicError::Io(e.to_string()))?;
        writeln!(f, "{json}").map_err(|e| LogicError::Io(e.to_string()))?;
    }
    Ok(())
}
