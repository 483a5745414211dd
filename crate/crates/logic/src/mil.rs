//! Meta-interpretive learning.
//!
//! Examples are proved by a meta-interpreter that, when an atom's predicate
//! has no background definition, fetches a metarule whose head matches and
//! records a *metasubstitution*: the binding of the metarule's predicate
//! variables. Predicate variables in metarule bodies are bound by proving
//! the body: to a background predicate, to an already-learned predicate, or
//! to a freshly invented one that must in turn be defined by further
//! metasubstitutions. The clause budget is raised one step at a time, so the
//! first hypothesis found is a smallest one. Candidates that prove a
//! negative example are rejected and the search backtracks.

use std::collections::BTreeSet;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use crate::parser::parse_program;
use crate::solve::{entails, solve, Limits, Program, ENTAILMENT_DEPTH};
use crate::term::{Clause, Literal, Name, Term};
use crate::unify::Bindings;
use crate::LogicError;

const META: &str = "$";
const META_SURFACE: &str = "meta__";

/// A second-order clause template. Atoms are stored in meta form
/// `$(P, A1, .., An)` so predicate variables unify like any other variable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Metarule {
    pub name: String,
    head: Term,
    body: Vec<Term>,
    pred_vars: Vec<Name>,
}

impl Metarule {
    /// Parses a template such as `P(A,B,C) :- Q(A), R(A,C)`, where
    /// uppercase functors are predicate variables.
    pub fn parse(name: &str, text: &str) -> Result<Metarule, LogicError> {
        let bad = |why: &str| LogicError::BadMetarule(name.to_string(), why.to_string());
        let mut src = String::with_capacity(text.len() + 16);
        let chars: Vec<char> = text.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let at_word_start = i == 0 || !(chars[i - 1].is_ascii_alphanumeric() || chars[i - 1] == '_');
            if c.is_ascii_uppercase() && at_word_start {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                if chars.get(i) == Some(&'(') {
                    src.push_str(&format!("{META_SURFACE}({word},"));
                    i += 1;
                } else {
                    src.push_str(&word);
                }
                continue;
            }
            src.push(c);
            i += 1;
        }
        let src = src.trim_end().trim_end_matches('.').to_string() + ".";
        let parsed = parse_program(&src)?;
        let [clause] = parsed.clauses.as_slice() else {
            return Err(bad("expected exactly one clause without disjunction"));
        };
        let to_meta = |t: &Term| -> Option<Term> {
            match t {
                Term::Compound(f, args) if &**f == META_SURFACE && args.len() >= 2 && args[0].is_var() => {
                    Some(Term::Compound(Arc::from(META), args.clone()))
                }
                _ => None,
            }
        };
        let head = to_meta(&clause.head).ok_or_else(|| bad("head predicate must be a variable"))?;
        let mut body = Vec::new();
        for lit in &clause.body {
            if lit.negated {
                return Err(bad("negated literals are not allowed"));
            }
            body.push(to_meta(&lit.atom).ok_or_else(|| bad("body predicates must be variables"))?);
        }
        let mut pred_vars = vec![pred_name(&head)];
        for b in &body {
            let p = pred_name(b);
            if !pred_vars.contains(&p) {
                pred_vars.push(p);
            }
        }
        Ok(Metarule { name: name.to_string(), head, body, pred_vars })
    }

    /// `P(A,B,C) :- Q(A,C)`: the cause follows the first argument.
    pub fn chain_first() -> Metarule {
        Metarule::parse("chain_first", "P(A,B,C) :- Q(A,C)").expect("builtin metarule")
    }

    /// `P(A,B,C) :- Q(B,C)`: the cause follows the second argument.
    pub fn chain_second() -> Metarule {
        Metarule::parse("chain_second", "P(A,B,C) :- Q(B,C)").expect("builtin metarule")
    }

    /// `P(A,B,C) :- Q(A), Q(B), Q(C), R(A,C)`: typed variant of `chain_first`.
    pub fn precondition() -> Metarule {
        Metarule::parse("precondition", "P(A,B,C) :- Q(A), Q(B), Q(C), R(A,C)").expect("builtin metarule")
    }

    /// `P(A,B) :- Q(A,C), R(C,B)`.
    pub fn chain() -> Metarule {
        Metarule::parse("chain", "P(A,B) :- Q(A,C), R(C,B)").expect("builtin metarule")
    }

    /// `P(A,B) :- Q(A,B)`.
    pub fn identity() -> Metarule {
        Metarule::parse("identity", "P(A,B) :- Q(A,B)").expect("builtin metarule")
    }

    /// The three templates used for causal induction.
    pub fn causal_set() -> Vec<Metarule> {
        vec![Metarule::chain_first(), Metarule::chain_second(), Metarule::precondition()]
    }

    pub fn head_arity(&self) -> usize {
        self.head.args().len() - 1
    }

    pub fn pred_vars(&self) -> &[Name] {
        &self.pred_vars
    }

    fn rename(&self, suffix: u64) -> (Term, Vec<Term>, Vec<Term>) {
        let head = self.head.rename(suffix);
        let body = self.body.iter().map(|b| b.rename(suffix)).collect();
        let preds = self.pred_vars.iter().map(|p| Term::Var(p.clone()).rename(suffix)).collect();
        (head, body, preds)
    }

    /// The first-order clause obtained by substituting predicate symbols.
    pub fn instantiate(&self, preds: &[Name]) -> Clause {
        let mut b = Bindings::new();
        for (var, name) in self.pred_vars.iter().zip(preds) {
            b.bind(var.clone(), Term::Const(name.clone()));
        }
        let head = decode(&b.resolve(&self.head));
        let body = self.body.iter().map(|t| Literal::pos(decode(&b.resolve(t)))).collect();
        Clause::rule(head, body)
    }
}

impl fmt::Display for Metarule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |t: &Term| {
            let args: Vec<String> = t.args()[1..].iter().map(|a| a.to_string()).collect();
            format!("{}({})", t.args()[0], args.join(","))
        };
        write!(f, "{}", show(&self.head))?;
        let body: Vec<String> = self.body.iter().map(show).collect();
        write!(f, " :- {}", body.join(", "))
    }
}

fn pred_name(meta: &Term) -> Name {
    match &meta.args()[0] {
        Term::Var(v) => v.clone(),
        other => Arc::from(other.to_string()),
    }
}

fn encode(atom: &Term) -> Term {
    match atom {
        Term::Compound(f, args) => {
            let mut v = Vec::with_capacity(args.len() + 1);
            v.push(Term::Const(f.clone()));
            v.extend(args.iter().cloned());
            Term::Compound(Arc::from(META), v)
        }
        Term::Const(c) => Term::Compound(Arc::from(META), vec![Term::Const(c.clone())]),
        Term::Var(_) => atom.clone(),
    }
}

fn decode(meta: &Term) -> Term {
    match meta {
        Term::Compound(f, args) if &**f == META => match &args[0] {
            Term::Const(p) => Term::compound(p, args[1..].to_vec()),
            Term::Var(p) => Term::compound(&format!("?{p}"), args[1..].to_vec()),
            other => Term::compound(&other.to_string(), args[1..].to_vec()),
        },
        other => other.clone(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InduceConfig {
    pub max_clauses: usize,
    /// Bound on meta-interpreter nesting through learned predicates.
    pub max_depth: usize,
    /// Cap on invented predicates per hypothesis.
    pub max_invented: usize,
}

impl Default for InduceConfig {
    fn default() -> Self {
        InduceConfig { max_clauses: 3, max_depth: 8, max_invented: 1 }
    }
}

/// An induced clause set together with the metasubstitutions it came from.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Hypothesis {
    pub clauses: Vec<Clause>,
    pub invented: Vec<(Name, usize)>,
    pub metasubs: Vec<(String, Vec<Name>)>,
}

impl Hypothesis {
    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.clauses {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Best effort when no hypothesis exists within the bounds.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PartialProof {
    pub covered: usize,
    pub total: usize,
    pub clauses: Vec<Clause>,
    pub first_unproved: Option<Term>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InduceOutcome {
    Found(Hypothesis),
    NotFound(PartialProof),
}

impl InduceOutcome {
    pub fn hypothesis(&self) -> Option<&Hypothesis> {
        match self {
            InduceOutcome::Found(h) => Some(h),
            InduceOutcome::NotFound(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
struct MetaSub {
    rule: usize,
    preds: Vec<Term>,
}

enum Goals {
    Nil,
    Cons(Term, Rc<Ancestors>, Rc<Goals>),
}

/// Goals on the path from an example to the current goal.
enum Ancestors {
    Root,
    Parent(Term, Rc<Ancestors>),
}

impl Ancestors {
    fn contains(&self, goal: &Term) -> bool {
        let mut cur = self;
        while let Ancestors::Parent(t, up) = cur {
            if t == goal {
                return true;
            }
            cur = up;
        }
        false
    }
}

struct Prover<'a> {
    background: &'a Program,
    bg_preds: Vec<(Name, usize)>,
    metarules: &'a [Metarule],
    positives: &'a [Term],
    negatives: &'a [Term],
    targets: Vec<(Name, usize)>,
    config: InduceConfig,
    budget: usize,
    bindings: Bindings,
    counter: u64,
    program: Vec<MetaSub>,
    invented: Vec<(Name, usize)>,
    found: Option<Hypothesis>,
    best: PartialProof,
    error: Option<LogicError>,
}

impl<'a> Prover<'a> {
    fn prove_examples(&mut self, i: usize) -> bool {
        if i > self.best.covered || self.best.clauses.is_empty() && i == self.best.covered {
            self.best.covered = i;
            self.best.clauses = self.current_clauses();
            self.best.first_unproved = self.positives.get(i).cloned();
        }
        if i == self.positives.len() {
            return self.accept();
        }
        let goals = Rc::new(Goals::Cons(encode(&self.positives[i]), Rc::new(Ancestors::Root), Rc::new(Goals::Nil)));
        self.prove(&goals, 0, &mut |p: &mut Prover| p.prove_examples(i + 1))
    }

    fn current_clauses(&self) -> Vec<Clause> {
        let mut out: Vec<Clause> = Vec::new();
        for ms in &self.program {
            let preds: Vec<Name> = ms
                .preds
                .iter()
                .map(|p| match self.bindings.resolve(p) {
                    Term::Const(n) => n,
                    Term::Var(v) => Arc::from(format!("?{v}")),
                    other => Arc::from(other.to_string()),
                })
                .collect();
            let clause = self.metarules[ms.rule].instantiate(&preds);
            if !out.contains(&clause) {
                out.push(clause);
            }
        }
        out
    }

    fn accept(&mut self) -> bool {
        let clauses = self.current_clauses();
        for neg in self.negatives {
            match entails(self.background, &clauses, neg) {
                Ok(false) => {}
                _ => return false,
            }
        }
        for pos in self.positives {
            match entails(self.background, &clauses, pos) {
                Ok(true) => {}
                _ => return false,
            }
        }
        let mut metasubs = Vec::new();
        let mut seen = BTreeSet::new();
        for ms in &self.program {
            let preds: Vec<Name> = ms
                .preds
                .iter()
                .map(|p| match self.bindings.resolve(p) {
                    Term::Const(n) => n,
                    other => Arc::from(other.to_string()),
                })
                .collect();
            let entry = (self.metarules[ms.rule].name.clone(), preds);
            if seen.insert(entry.clone()) {
                metasubs.push(entry);
            }
        }
        self.found = Some(Hypothesis { clauses, invented: self.invented.clone(), metasubs });
        true
    }

    fn is_learned(&self, name: &str, arity: usize) -> bool {
        self.targets.iter().chain(self.invented.iter()).any(|(n, a)| &**n == name && *a == arity)
    }

    fn prove(&mut self, goals: &Rc<Goals>, depth: usize, k: &mut dyn FnMut(&mut Prover<'a>) -> bool) -> bool {
        let (goal, anc, rest) = match &**goals {
            Goals::Nil => return k(self),
            Goals::Cons(g, anc, rest) => (self.bindings.resolve(g), anc.clone(), rest.clone()),
        };
        let arity = goal.args().len() - 1;
        match goal.args()[0].clone() {
            Term::Const(name) => {
                if self.background.defines(&name, arity) {
                    self.prove_background(&goal, &rest, depth, k)
                } else if self.is_learned(&name, arity) {
                    self.prove_learned(&name, &goal, &anc, &rest, depth, true, k)
                } else {
                    false
                }
            }
            Term::Var(var) => {
                let candidates: Vec<Name> = self
                    .bg_preds
                    .iter()
                    .filter(|(_, a)| *a == arity)
                    .map(|(n, _)| n.clone())
                    .collect();
                for name in candidates {
                    let mark = self.bindings.mark();
                    self.bindings.bind(var.clone(), Term::Const(name));
                    if self.prove_background(&goal, &rest, depth, k) {
                        return true;
                    }
                    self.bindings.undo(mark);
                }
                let learned: Vec<Name> = self
                    .targets
                    .iter()
                    .chain(self.invented.iter())
                    .filter(|(_, a)| *a == arity)
                    .map(|(n, _)| n.clone())
                    .collect();
                for name in learned {
                    let mark = self.bindings.mark();
                    self.bindings.bind(var.clone(), Term::Const(name.clone()));
                    if self.prove_learned(&name, &goal, &anc, &rest, depth, true, k) {
                        return true;
                    }
                    self.bindings.undo(mark);
                }
                if self.program.len() < self.budget && self.invented.len() < self.config.max_invented {
                    let base = self.targets.first().map(|(n, _)| n.to_string()).unwrap_or_else(|| "inv".into());
                    let name: Name = Arc::from(format!("{base}_{}", self.invented.len() + 1));
                    self.invented.push((name.clone(), arity));
                    let mark = self.bindings.mark();
                    self.bindings.bind(var.clone(), Term::Const(name.clone()));
                    let stop = self.prove_learned(&name, &goal, &anc, &rest, depth, false, k);
                    self.bindings.undo(mark);
                    self.invented.pop();
                    if stop {
                        return true;
                    }
                }
                false
            }
            _ => false,
        }
    }

    fn prove_background(
        &mut self,
        goal: &Term,
        rest: &Rc<Goals>,
        depth: usize,
        k: &mut dyn FnMut(&mut Prover<'a>) -> bool,
    ) -> bool {
        let atom = decode(&self.bindings.resolve(goal));
        let max_solutions = if atom.is_ground() { 1 } else { 10_000 };
        let sols = match solve(self.background, &[Literal::pos(atom)], Limits::new(ENTAILMENT_DEPTH, max_solutions)) {
            Ok(s) => s,
            Err(e) => {
                self.error = Some(e);
                return false;
            }
        };
        for answer in sols.answers {
            let mark = self.bindings.mark();
            let ok = answer.0.iter().all(|(v, t)| self.bindings.unify(&Term::Var(v.clone()), t));
            if ok && self.prove(rest, depth, k) {
                return true;
            }
            self.bindings.undo(mark);
        }
        false
    }

    fn prove_learned(
        &mut self,
        name: &Name,
        goal: &Term,
        anc: &Rc<Ancestors>,
        rest: &Rc<Goals>,
        depth: usize,
        allow_reuse: bool,
        k: &mut dyn FnMut(&mut Prover<'a>) -> bool,
    ) -> bool {
        // A goal identical to one of its ancestors can only lengthen a proof.
        if depth >= self.config.max_depth || anc.contains(goal) {
            return false;
        }
        let anc = Rc::new(Ancestors::Parent(goal.clone(), anc.clone()));
        let arity = goal.args().len() - 1;
        let metarules = self.metarules;
        if allow_reuse {
            for i in 0..self.program.len() {
                let ms = self.program[i].clone();
                let rule = &metarules[ms.rule];
                if rule.head_arity() != arity {
                    continue;
                }
                match self.bindings.resolve(&ms.preds[0]) {
                    Term::Const(n) if n == *name => {}
                    _ => continue,
                }
                self.counter += 1;
                let (head, body, preds) = rule.rename(self.counter);
                let mark = self.bindings.mark();
                let ok = preds.iter().zip(&ms.preds).all(|(p, bound)| self.bindings.unify(p, bound))
                    && self.bindings.unify(&head, goal);
                if ok && self.prove(&push_all(body, &anc, rest), depth + 1, k) {
                    return true;
                }
                self.bindings.undo(mark);
            }
        }
        if self.program.len() >= self.budget {
            return false;
        }
        for (r, rule) in metarules.iter().enumerate() {
            if rule.head_arity() != arity {
                continue;
            }
            self.counter += 1;
            let (head, body, preds) = rule.rename(self.counter);
            let mark = self.bindings.mark();
            if self.bindings.unify(&preds[0], &Term::Const(name.clone())) && self.bindings.unify(&head, goal) {
                self.program.push(MetaSub { rule: r, preds });
                let stop = self.prove(&push_all(body, &anc, rest), depth + 1, k);
                self.program.pop();
                if stop {
                    return true;
                }
            }
            self.bindings.undo(mark);
        }
        false
    }
}

fn push_all(body: Vec<Term>, anc: &Rc<Ancestors>, rest: &Rc<Goals>) -> Rc<Goals> {
    let mut next = rest.clone();
    for t in body.into_iter().rev() {
        next = Rc::new(Goals::Cons(t, anc.clone(), next));
    }
    next
}

/// Induces a hypothesis `H` with `B ∪ H ⊨ e` for every positive and
/// `B ∪ H ⊭ e` for every negative, using at most `config.max_clauses`
/// metarule instances. Deterministic for a given input order.
pub fn induce(
    background: &Program,
    positives: &[Term],
    negatives: &[Term],
    metarules: &[Metarule],
    config: InduceConfig,
) -> Result<InduceOutcome, LogicError> {
    if config.max_clauses == 0 {
        return Err(LogicError::BadLimits { depth: config.max_depth, solutions: config.max_clauses });
    }
    if positives.is_empty() {
        return Ok(InduceOutcome::Found(Hypothesis::default()));
    }
    for e in positives.iter().chain(negatives) {
        if !e.is_ground() {
            return Err(LogicError::NotGround(e.to_string()));
        }
    }
    let mut targets: Vec<(Name, usize)> = Vec::new();
    for e in positives {
        let key = e.indicator().expect("ground atom");
        if !targets.contains(&key) && !background.defines(&key.0, key.1) {
            targets.push(key);
        }
    }
    let mut best = PartialProof { total: positives.len(), ..Default::default() };
    for budget in 1..=config.max_clauses {
        let mut prover = Prover {
            background,
            bg_preds: background.predicates(),
            metarules,
            positives,
            negatives,
            targets: targets.clone(),
            config,
            budget,
            bindings: Bindings::new(),
            counter: 0,
            program: Vec::new(),
            invented: Vec::new(),
            found: None,
            best: PartialProof { total: positives.len(), ..Default::default() },
            error: None,
        };
        prover.prove_examples(0);
        if let Some(err) = prover.error.take() {
            return Err(err);
        }
        if let Some(h) = prover.found.take() {
            return Ok(InduceOutcome::Found(h));
        }
        if prover.best.covered >= best.covered {
            best = prover.best;
        }
    }
    Ok(InduceOutcome::NotFound(best))
}
