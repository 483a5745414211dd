//! Robinson unification with occurs check.
//!
//! [`Bindings`] is the trail-based store used by the resolution engines;
//! [`unify`] is the value-level entry point that returns a resolved mgu.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::term::{Name, Term};

/// A resolved substitution: every binding is fully dereferenced.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Subst(pub BTreeMap<Name, Term>);

impl Subst {
    pub fn get(&self, var: &str) -> Option<&Term> {
        self.0.get(var)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn apply(&self, t: &Term) -> Term {
        match t {
            Term::Var(v) => match self.0.get(v) {
                Some(bound) => self.apply(bound),
                None => t.clone(),
            },
            Term::Compound(f, args) => {
                Term::Compound(f.clone(), args.iter().map(|a| self.apply(a)).collect())
            }
            Term::Const(_) => t.clone(),
        }
    }
}

impl fmt::Display for Subst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        f.write_str("}")
    }
}

/// Mutable variable store with an undo trail.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    map: HashMap<Name, Term>,
    trail: Vec<Name>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mark(&self) -> usize {
        self.trail.len()
    }

    pub fn undo(&mut self, mark: usize) {
        while self.trail.len() > mark {
            let v = self.trail.pop().expect("trail underflow");
            self.map.remove(&v);
        }
    }

    pub fn bind(&mut self, var: Name, t: Term) {
        self.trail.push(var.clone());
        self.map.insert(var, t);
    }

    /// Follows variable chains until an unbound variable or non-variable.
    pub fn walk<'a>(&'a self, mut t: &'a Term) -> &'a Term {
        while let Term::Var(v) = t {
            match self.map.get(v) {
                Some(next) => t = next,
                None => break,
            }
        }
        t
    }

    /// Fully applies the current bindings.
    pub fn resolve(&self, t: &Term) -> Term {
        match self.walk(t) {
            Term::Compound(f, args) => {
                Term::Compound(f.clone(), args.iter().map(|a| self.resolve(a)).collect())
            }
            other => other.clone(),
        }
    }

    fn occurs(&self, var: &str, t: &Term) -> bool {
        match self.walk(t) {
            Term::Var(v) => &**v == var,
            Term::Compound(_, args) => args.iter().any(|a| self.occurs(var, a)),
            Term::Const(_) => false,
        }
    }

    /// Unifies under the current bindings. On failure, partial bindings made
    /// by this call are undone.
    pub fn unify(&mut self, a: &Term, b: &Term) -> bool {
        let mark = self.mark();
        if self.unify_inner(a, b) {
            true
        } else {
            self.undo(mark);
            false
        }
    }

    fn unify_inner(&mut self, a: &Term, b: &Term) -> bool {
        let a = self.walk(a).clone();
        let b = self.walk(b).clone();
        match (&a, &b) {
            (Term::Var(x), Term::Var(y)) if x == y => true,
            (Term::Var(x), _) => {
                if self.occurs(x, &b) {
                    return false;
                }
                self.bind(x.clone(), b);
                true
            }
            (_, Term::Var(y)) => {
                if self.occurs(y, &a) {
                    return false;
                }
                self.bind(y.clone(), a);
                true
            }
            (Term::Const(x), Term::Const(y)) => x == y,
            (Term::Compound(f, xs), Term::Compound(g, ys)) => {
                f == g
                    && xs.len() == ys.len()
                    && xs.iter().zip(ys.iter()).all(|(x, y)| self.unify_inner(x, y))
            }
            _ => false,
        }
    }

    /// Resolved bindings for the given variables (unbound ones are omitted).
    pub fn project<'a>(&self, vars: impl IntoIterator<Item = &'a Name>) -> Subst {
        let mut out = BTreeMap::new();
        for v in vars {
            let t = self.resolve(&Term::Var(v.clone()));
            if t != Term::Var(v.clone()) {
                out.insert(v.clone(), t);
            }
        }
        Subst(out)
    }
}

/// Most general unifier of two terms, or `None` when they do not unify.
pub fn unify(a: &Term, b: &Term) -> Option<Subst> {
    let mut bindings = Bindings::new();
    if !bindings.unify(a, b) {
        return None;
    }
    let mut vars = std::collections::BTreeSet::new();
    a.variables(&mut vars);
    b.variables(&mut vars);
    Some(bindings.project(&vars))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_term;

    fn t(s: &str) -> Term {
        parse_term(s).unwrap()
    }

    #[test]
    fn binds_variable_to_constant() {
        let s = unify(&t("X"), &t("a")).unwrap();
        assert_eq!(s.get("X"), Some(&t("a")));
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn unifies_compound_arguments_pairwise() {
        let s = unify(&t("f(X,b)"), &t("f(a,Y)")).unwrap();
        assert_eq!(s.get("X"), Some(&t("a")));
        assert_eq!(s.get("Y"), Some(&t("b")));
    }

    #[test]
    fn occurs_check_rejects_cyclic_binding() {
        assert!(unify(&t("X"), &t("f(X)")).is_none());
        assert!(unify(&t("f(X,g(X))"), &t("f(Y,Y)")).is_none());
    }

    #[test]
    fn clashes_fail() {
        assert!(unify(&t("f(a)"), &t("g(a)")).is_none());
        assert!(unify(&t("f(a)"), &t("f(a,b)")).is_none());
        assert!(unify(&t("a"), &t("b")).is_none());
    }

    #[test]
    fn failed_unify_leaves_no_bindings() {
        let mut b = Bindings::new();
        assert!(!b.unify(&t("f(X,a)"), &t("f(b,b)")));
        assert_eq!(b.resolve(&t("X")), t("X"));
    }

    #[test]
    fn chained_variables_resolve_fully() {
        let s = unify(&t("f(X,Y,Z)"), &t("f(Y,Z,c)")).unwrap();
        assert_eq!(s.apply(&t("X")), t("c"));
        assert_eq!(s.apply(&t("f(X,Y,Z)")), t("f(c,c,c)"));
    }
}
