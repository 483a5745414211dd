//! Bottom-up evaluation over a finite constant universe.
//!
//! This is deliberately a different algorithm from SLD resolution: it
//! computes the least Herbrand model by naive fixpoint iteration, so it can
//! serve as an independent check on [`crate::solve`] and [`crate::induce`].

use std::collections::{BTreeSet, HashMap};

use crate::solve::Program;
use crate::term::{Clause, Name, Term};
use crate::unify::Bindings;
use crate::LogicError;

/// Constants occurring in argument positions of `program`, plus `extra`.
pub fn universe_of(program: &Program, extra: &[Term]) -> Vec<Term> {
    let mut out = BTreeSet::new();
    for clause in program.clauses() {
        for arg in clause.head.args() {
            arg.constants(&mut out);
        }
        for lit in &clause.body {
            for arg in lit.atom.args() {
                arg.constants(&mut out);
            }
        }
    }
    for t in extra {
        for arg in t.args() {
            arg.constants(&mut out);
        }
    }
    out.into_iter().collect()
}

type Model = HashMap<(Name, usize), Vec<Term>>;

fn insert(model: &mut Model, seen: &mut BTreeSet<Term>, atom: Term) -> bool {
    if !seen.insert(atom.clone()) {
        return false;
    }
    let key = atom.indicator().expect("ground atom");
    model.entry(key).or_default().push(atom);
    true
}

fn derive(
    clause: &Clause,
    lit_idx: usize,
    model: &Model,
    universe: &[Term],
    bindings: &mut Bindings,
    out: &mut Vec<Term>,
) {
    if lit_idx == clause.body.len() {
        let head = bindings.resolve(&clause.head);
        let mut free = BTreeSet::new();
        head.variables(&mut free);
        let free: Vec<Name> = free.into_iter().collect();
        ground_out(&head, &free, 0, universe, bindings, out);
        return;
    }
    let goal = bindings.resolve(&clause.body[lit_idx].atom);
    let Some(key) = goal.indicator() else { return };
    let Some(facts) = model.get(&key) else { return };
    for fact in facts {
        let mark = bindings.mark();
        if bindings.unify(&goal, fact) {
            derive(clause, lit_idx + 1, model, universe, bindings, out);
        }
        bindings.undo(mark);
    }
}

fn ground_out(head: &Term, free: &[Name], i: usize, universe: &[Term], bindings: &mut Bindings, out: &mut Vec<Term>) {
    if i == free.len() {
        out.push(bindings.resolve(head));
        return;
    }
    for c in universe {
        let mark = bindings.mark();
        bindings.bind(free[i].clone(), c.clone());
        ground_out(head, free, i + 1, universe, bindings, out);
        bindings.undo(mark);
    }
}

/// Least Herbrand model of a definite program whose head-only variables
/// range over `universe`.
pub fn least_model(program: &Program, universe: &[Term]) -> Result<BTreeSet<Term>, LogicError> {
    if let Some(c) = program.clauses().iter().find(|c| c.body.iter().any(|l| l.negated)) {
        return Err(LogicError::NegationUnsupported(c.to_string()));
    }
    let mut model: Model = HashMap::new();
    let mut seen = BTreeSet::new();
    loop {
        let mut derived = Vec::new();
        for clause in program.clauses() {
            let mut bindings = Bindings::new();
            derive(clause, 0, &model, universe, &mut bindings, &mut derived);
        }
        let mut changed = false;
        for atom in derived {
            changed |= insert(&mut model, &mut seen, atom);
        }
        if !changed {
            return Ok(seen);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_program, parse_term};

    fn program(src: &str) -> Program {
        Program::from_parsed(parse_program(src).unwrap())
    }

    #[test]
    fn transitive_closure() {
        let p = program("e(a,b). e(b,c). path(X,Y) :- e(X,Y). path(X,Z) :- e(X,Y), path(Y,Z).");
        let u = universe_of(&p, &[]);
        let m = least_model(&p, &u).unwrap();
        assert!(m.contains(&parse_term("path(a,c)").unwrap()));
        assert!(!m.contains(&parse_term("path(c,a)").unwrap()));
        assert_eq!(m.iter().filter(|t| t.indicator().unwrap().0.as_ref() == "path").count(), 3);
    }

    #[test]
    fn head_only_variables_range_over_universe() {
        let p = program("k(a). k(b). top(X,Y) :- k(Y).");
        let u = universe_of(&p, &[]);
        let m = least_model(&p, &u).unwrap();
        assert_eq!(m.len(), 2 + 4);
    }

    #[test]
    fn negation_is_rejected() {
        let p = program("p(X) :- q(X), \\+ r(X).");
        assert!(least_model(&p, &[]).is_err());
    }
}
