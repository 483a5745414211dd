use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

/// Interned-ish symbol name. Cheap to clone and shareable across threads.
pub type Name = Arc<str>;

/// A first-order term.
///
/// Constants and functors start lowercase, variables start uppercase or `_`
/// in the surface syntax. A compound always has at least one argument.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Const(Name),
    Var(Name),
    Compound(Name, Vec<Term>),
}

impl Term {
    pub fn constant(name: &str) -> Term {
        Term::Const(Arc::from(name))
    }

    pub fn var(name: &str) -> Term {
        Term::Var(Arc::from(name))
    }

    /// Builds `functor(args..)`, collapsing to a constant when `args` is empty.
    pub fn compound(functor: &str, args: Vec<Term>) -> Term {
        if args.is_empty() {
            Term::constant(functor)
        } else {
            Term::Compound(Arc::from(functor), args)
        }
    }

    /// Convenience for ground atoms over constants: `Term::atom("adj", &["a", "b"])`.
    pub fn atom(functor: &str, args: &[&str]) -> Term {
        Term::compound(functor, args.iter().map(|a| Term::constant(a)).collect())
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::Const(_) => true,
            Term::Var(_) => false,
            Term::Compound(_, args) => args.iter().all(Term::is_ground),
        }
    }

    /// Predicate indicator `(name, arity)` when this term is used as an atom.
    pub fn indicator(&self) -> Option<(Name, usize)> {
        match self {
            Term::Const(n) => Some((n.clone(), 0)),
            Term::Compound(n, args) => Some((n.clone(), args.len())),
            Term::Var(_) => None,
        }
    }

    pub fn args(&self) -> &[Term] {
        match self {
            Term::Compound(_, args) => args,
            _ => &[],
        }
    }

    pub fn variables(&self, out: &mut BTreeSet<Name>) {
        match self {
            Term::Var(v) => {
                out.insert(v.clone());
            }
            Term::Compound(_, args) => args.iter().for_each(|a| a.variables(out)),
            Term::Const(_) => {}
        }
    }

    pub fn occurs(&self, var: &str) -> bool {
        match self {
            Term::Var(v) => &**v == var,
            Term::Compound(_, args) => args.iter().any(|a| a.occurs(var)),
            Term::Const(_) => false,
        }
    }

    /// Renames every variable `V` to `V#suffix`. `#` never appears in parsed
    /// names, so renamed clauses cannot capture user variables.
    pub fn rename(&self, suffix: u64) -> Term {
        match self {
            Term::Var(v) => Term::Var(Arc::from(format!("{v}#{suffix}"))),
            Term::Compound(f, args) => {
                Term::Compound(f.clone(), args.iter().map(|a| a.rename(suffix)).collect())
            }
            Term::Const(_) => self.clone(),
        }
    }

    /// Collects every constant symbol, including 0-ary atoms nested as arguments.
    pub fn constants(&self, out: &mut BTreeSet<Term>) {
        match self {
            Term::Const(_) => {
                out.insert(self.clone());
            }
            Term::Compound(_, args) => args.iter().for_each(|a| a.constants(out)),
            Term::Var(_) => {}
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Const(n) | Term::Var(n) => f.write_str(n),
            Term::Compound(name, args) => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// A body literal: an atom, possibly under negation as failure.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Literal {
    pub atom: Term,
    pub negated: bool,
}

impl Literal {
    pub fn pos(atom: Term) -> Self {
        Literal { atom, negated: false }
    }

    pub fn neg(atom: Term) -> Self {
        Literal { atom, negated: true }
    }

    fn rename(&self, suffix: u64) -> Literal {
        Literal { atom: self.atom.rename(suffix), negated: self.negated }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            write!(f, "\\+ {}", self.atom)
        } else {
            write!(f, "{}", self.atom)
        }
    }
}

/// A Horn clause `head :- body`. An empty body makes it a fact.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Clause {
    pub head: Term,
    pub body: Vec<Literal>,
}

impl Clause {
    pub fn fact(head: Term) -> Self {
        Clause { head, body: Vec::new() }
    }

    pub fn rule(head: Term, body: Vec<Literal>) -> Self {
        Clause { head, body }
    }

    pub fn is_fact(&self) -> bool {
        self.body.is_empty()
    }

    pub fn is_ground(&self) -> bool {
        self.head.is_ground() && self.body.iter().all(|l| l.atom.is_ground())
    }

    pub fn variables(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        self.head.variables(&mut out);
        for lit in &self.body {
            lit.atom.variables(&mut out);
        }
        out
    }

    pub fn rename(&self, suffix: u64) -> Clause {
        Clause {
            head: self.head.rename(suffix),
            body: self.body.iter().map(|l| l.rename(suffix)).collect(),
        }
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.head)?;
        if !self.body.is_empty() {
            f.write_str(" :- ")?;
            for (i, lit) in self.body.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{lit}")?;
            }
        }
        f.write_str(".")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_matches_surface_syntax() {
        let c = Clause::rule(
            Term::compound("sep", vec![Term::var("A"), Term::var("B"), Term::var("C")]),
            vec![
                Literal::pos(Term::compound("same", vec![Term::var("A"), Term::var("C")])),
                Literal::neg(Term::atom("adj", &["x", "y"])),
            ],
        );
        assert_eq!(c.to_string(), "sep(A,B,C) :- same(A,C), \\+ adj(x,y).");
        assert!(!c.is_ground());
        assert_eq!(c.variables().len(), 3);
    }

    #[test]
    fn rename_only_touches_variables() {
        let t = Term::compound("f", vec![Term::var("X"), Term::constant("a")]);
        assert_eq!(t.rename(7).to_string(), "f(X#7,a)");
    }

    #[test]
    fn empty_compound_collapses_to_constant() {
        assert_eq!(Term::compound("a", vec![]), Term::constant("a"));
    }
}
