//! Depth-bounded SLD resolution with leftmost selection and clause order as
//! written. Negated literals use negation as failure.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;
use std::sync::Arc;

use crate::parser::ParsedProgram;
use crate::term::{Clause, Literal, Name, Term};
use crate::unify::{Bindings, Subst};
use crate::LogicError;

/// Depth bound used by [`entails`].
pub const ENTAILMENT_DEPTH: usize = 32;

/// An indexed clause list. Clause order is preserved per predicate.
#[derive(Clone, Debug, Default)]
pub struct Program {
    clauses: Vec<Clause>,
    index: HashMap<(Name, usize), Vec<usize>>,
    declarations: Vec<(Name, usize)>,
}

impl Program {
    pub fn new(clauses: impl IntoIterator<Item = Clause>) -> Self {
        let mut p = Program::default();
        p.extend(clauses);
        p
    }

    pub fn from_parsed(parsed: ParsedProgram) -> Self {
        let mut p = Program::new(parsed.clauses);
        p.declarations = parsed.declarations;
        p
    }

    pub fn push(&mut self, clause: Clause) {
        if let Some(key) = clause.head.indicator() {
            self.index.entry(key).or_default().push(self.clauses.len());
        }
        self.clauses.push(clause);
    }

    pub fn extend(&mut self, clauses: impl IntoIterator<Item = Clause>) {
        for c in clauses {
            self.push(c);
        }
    }

    /// A copy of this program with extra clauses appended.
    pub fn with(&self, extra: &[Clause]) -> Program {
        let mut p = self.clone();
        p.extend(extra.iter().cloned());
        p
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn clauses_for(&self, name: &str, arity: usize) -> impl Iterator<Item = &Clause> {
        self.index
            .get(&(Arc::from(name), arity))
            .into_iter()
            .flatten()
            .map(move |&i| &self.clauses[i])
    }

    /// Every predicate that is declared or defined, in first-appearance order.
    pub fn predicates(&self) -> Vec<(Name, usize)> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let defined = self.clauses.iter().filter_map(|c| c.head.indicator());
        for key in self.declarations.iter().cloned().chain(defined) {
            if seen.insert(key.clone()) {
                out.push(key);
            }
        }
        out
    }

    pub fn defines(&self, name: &str, arity: usize) -> bool {
        self.index.contains_key(&(Arc::from(name), arity))
            || self.declarations.iter().any(|(n, a)| &**n == name && *a == arity)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Limits {
    pub max_depth: usize,
    pub max_solutions: usize,
}

impl Limits {
    pub fn new(max_depth: usize, max_solutions: usize) -> Self {
        Limits { max_depth, max_solutions }
    }
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_depth: ENTAILMENT_DEPTH, max_solutions: 1000 }
    }
}

/// Answers of a query. `depth_exhausted` is set when some branch was cut by
/// the depth bound, so an empty answer list is not proof of finite failure.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Solutions {
    pub answers: Vec<Subst>,
    pub depth_exhausted: bool,
    pub exhausted_goal: Option<String>,
}

impl Solutions {
    pub fn succeeded(&self) -> bool {
        !self.answers.is_empty()
    }

    pub fn finitely_failed(&self) -> bool {
        self.answers.is_empty() && !self.depth_exhausted
    }
}

enum Goals {
    Nil,
    Cons(Literal, Rc<Goals>),
}

struct Solver<'p> {
    program: &'p Program,
    bindings: Bindings,
    counter: u64,
    limits: Limits,
    query_vars: Vec<(Name, Name)>,
    out: Solutions,
}

impl Solver<'_> {
    /// Returns `true` when the solution limit has been reached.
    fn run(&mut self, goals: &Rc<Goals>, depth: usize) -> bool {
        let (lit, rest) = match &**goals {
            Goals::Nil => {
                let mut answer = BTreeMap::new();
                for (original, private) in &self.query_vars {
                    let t = self.bindings.resolve(&Term::Var(private.clone()));
                    answer.insert(original.clone(), unprivate(&t, &self.query_vars));
                }
                self.out.answers.push(Subst(answer));
                return self.out.answers.len() >= self.limits.max_solutions;
            }
            Goals::Cons(lit, rest) => (lit, rest),
        };
        if depth >= self.limits.max_depth {
            self.exhaust(&lit.atom);
            return false;
        }
        if lit.negated {
            return self.negation(lit, rest, depth);
        }
        let goal = self.bindings.resolve(&lit.atom);
        let Some((name, arity)) = goal.indicator() else {
            return false;
        };
        let program = self.program;
        for clause in program.clauses_for(&name, arity) {
            self.counter += 1;
            let renamed = clause.rename(self.counter);
            let mark = self.bindings.mark();
            if self.bindings.unify(&renamed.head, &goal) {
                let mut next = rest.clone();
                for body_lit in renamed.body.into_iter().rev() {
                    next = Rc::new(Goals::Cons(body_lit, next));
                }
                if self.run(&next, depth + 1) {
                    self.bindings.undo(mark);
                    return true;
                }
            }
            self.bindings.undo(mark);
        }
        false
    }

    fn negation(&mut self, lit: &Literal, rest: &Rc<Goals>, depth: usize) -> bool {
        let atom = self.bindings.resolve(&lit.atom);
        let mut inner = Solver {
            program: self.program,
            bindings: self.bindings.clone(),
            counter: self.counter,
            limits: Limits::new(self.limits.max_depth - depth, 1),
            query_vars: Vec::new(),
            out: Solutions::default(),
        };
        let goals = Rc::new(Goals::Cons(Literal::pos(atom), Rc::new(Goals::Nil)));
        inner.run(&goals, 0);
        self.counter = inner.counter;
        if inner.out.succeeded() {
            return false;
        }
        if inner.out.depth_exhausted {
            self.out.depth_exhausted = true;
            if self.out.exhausted_goal.is_none() {
                self.out.exhausted_goal = inner.out.exhausted_goal;
            }
            return false;
        }
        self.run(rest, depth + 1)
    }

    fn exhaust(&mut self, atom: &Term) {
        self.out.depth_exhausted = true;
        if self.out.exhausted_goal.is_none() {
            let resolved = self.bindings.resolve(atom);
            self.out.exhausted_goal = Some(unprivate(&resolved, &self.query_vars).to_string());
        }
    }
}

fn unprivate(t: &Term, map: &[(Name, Name)]) -> Term {
    match t {
        Term::Var(v) => map
            .iter()
            .find(|(_, private)| private == v)
            .map(|(original, _)| Term::Var(original.clone()))
            .unwrap_or_else(|| t.clone()),
        Term::Compound(f, args) => Term::Compound(f.clone(), args.iter().map(|a| unprivate(a, map)).collect()),
        Term::Const(_) => t.clone(),
    }
}

fn privatize(t: &Term, map: &[(Name, Name)]) -> Term {
    match t {
        Term::Var(v) => map
            .iter()
            .find(|(original, _)| original == v)
            .map(|(_, private)| Term::Var(private.clone()))
            .unwrap_or_else(|| t.clone()),
        Term::Compound(f, args) => Term::Compound(f.clone(), args.iter().map(|a| privatize(a, map)).collect()),
        Term::Const(_) => t.clone(),
    }
}

/// Runs `query` against `program`. Answers bind the query's variables and
/// are returned in SLD order, duplicates included.
pub fn solve(program: &Program, query: &[Literal], limits: Limits) -> Result<Solutions, LogicError> {
    if limits.max_depth == 0 || limits.max_solutions == 0 {
        return Err(LogicError::BadLimits { depth: limits.max_depth, solutions: limits.max_solutions });
    }
    // Query variables move to a `?n` namespace so they cannot collide with
    // `Name#k` clause renamings, whatever the caller's variable names are.
    let mut vars = BTreeSet::new();
    for lit in query {
        lit.atom.variables(&mut vars);
    }
    let query_vars: Vec<(Name, Name)> = vars
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, Arc::from(format!("?{i}"))))
        .collect();
    let mut goals = Rc::new(Goals::Nil);
    for lit in query.iter().rev() {
        let atom = privatize(&lit.atom, &query_vars);
        goals = Rc::new(Goals::Cons(Literal { atom, negated: lit.negated }, goals));
    }
    let mut solver = Solver {
        program,
        bindings: Bindings::new(),
        counter: 0,
        limits,
        query_vars,
        out: Solutions::default(),
    };
    solver.run(&goals, 0);
    Ok(solver.out)
}

/// Whether `background ∪ hypothesis` proves the ground `atom` within
/// [`ENTAILMENT_DEPTH`] resolution steps. Running out of depth is an error,
/// not a `false`.
pub fn entails(background: &Program, hypothesis: &[Clause], atom: &Term) -> Result<bool, LogicError> {
    if !atom.is_ground() {
        return Err(LogicError::NotGround(atom.to_string()));
    }
    let program = background.with(hypothesis);
    let sols = solve(&program, &[Literal::pos(atom.clone())], Limits::new(ENTAILMENT_DEPTH, 1))?;
    if sols.succeeded() {
        Ok(true)
    } else if sols.depth_exhausted {
        Err(LogicError::DepthExhausted {
            bound: ENTAILMENT_DEPTH,
            goal: sols.exhausted_goal.unwrap_or_else(|| atom.to_string()),
        })
    } else {
        Ok(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_program, parse_query, parse_term};

    fn program(src: &str) -> Program {
        Program::from_parsed(parse_program(src).unwrap())
    }

    fn run(p: &Program, q: &str) -> Solutions {
        solve(p, &parse_query(q).unwrap(), Limits::new(64, 100)).unwrap()
    }

    #[test]
    fn answers_follow_clause_order_and_keep_duplicates() {
        let p = program("p(a). p(b). p(a).");
        let sols = run(&p, "p(X)");
        let xs: Vec<_> = sols.answers.iter().map(|s| s.get("X").unwrap().to_string()).collect();
        assert_eq!(xs, ["a", "b", "a"]);
    }

    #[test]
    fn conjunction_joins_through_shared_variables() {
        let p = program("parent(ann,bob). parent(bob,cid). gp(X,Z) :- parent(X,Y), parent(Y,Z).");
        let sols = run(&p, "gp(ann,W)");
        assert_eq!(sols.answers.len(), 1);
        assert_eq!(sols.answers[0].get("W").unwrap().to_string(), "cid");
    }

    #[test]
    fn undefined_predicate_fails_finitely() {
        let p = program("p(a).");
        let sols = run(&p, "q(X)");
        assert!(sols.finitely_failed());
    }

    #[test]
    fn left_recursion_reports_depth_exhaustion() {
        let p = program("loop(X) :- loop(X).");
        let sols = solve(&p, &parse_query("loop(a)").unwrap(), Limits::new(10, 1)).unwrap();
        assert!(!sols.succeeded());
        assert!(sols.depth_exhausted);
        assert_eq!(sols.exhausted_goal.as_deref(), Some("loop(a)"));
    }

    #[test]
    fn negation_as_failure() {
        let p = program("bird(tweety). bird(pingu). penguin(pingu). flies(X) :- bird(X), \\+ penguin(X).");
        let sols = run(&p, "flies(X)");
        assert_eq!(sols.answers.len(), 1);
        assert_eq!(sols.answers[0].get("X").unwrap().to_string(), "tweety");
    }

    #[test]
    fn solution_limit_is_honoured() {
        let p = program("n(a). n(b). n(c).");
        let sols = solve(&p, &parse_query("n(X)").unwrap(), Limits::new(8, 2)).unwrap();
        assert_eq!(sols.answers.len(), 2);
    }

    #[test]
    fn zero_limits_are_rejected() {
        let p = program("n(a).");
        assert!(solve(&p, &parse_query("n(X)").unwrap(), Limits::new(0, 1)).is_err());
    }

    #[test]
    fn query_variables_cannot_capture_clause_variables() {
        // `X#1` is what the first renaming of clause variable `X` would be called.
        let p = program("same(X,X).");
        let q = vec![Literal::pos(Term::compound("same", vec![Term::var("X#1"), Term::constant("a")]))];
        let sols = solve(&p, &q, Limits::default()).unwrap();
        assert_eq!(sols.answers[0].get("X#1").unwrap().to_string(), "a");
    }

    #[test]
    fn entails_requires_ground_and_flags_depth() {
        let p = program("loop(X) :- loop(X). fact(a).");
        assert!(entails(&p, &[], &parse_term("fact(a)").unwrap()).unwrap());
        assert!(!entails(&p, &[], &parse_term("fact(b)").unwrap()).unwrap());
        assert!(matches!(
            entails(&p, &[], &parse_term("loop(a)").unwrap()),
            Err(LogicError::DepthExhausted { .. })
        ));
        assert!(matches!(entails(&p, &[], &parse_term("fact(X)").unwrap()), Err(LogicError::NotGround(_))));
    }
}
