use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use spinereport_logic::{
    least_model, parse_program, solve, unify, universe_of, Clause, Limits, Literal, Program, Term,
};

fn arb_term() -> impl Strategy<Value = Term> {
    let leaf = prop_oneof![
        prop::sample::select(vec!["a", "b", "c"]).prop_map(Term::constant),
        prop::sample::select(vec!["X", "Y", "Z", "W"]).prop_map(Term::var),
    ];
    leaf.prop_recursive(3, 16, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(|t| Term::compound("f", vec![t])),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::compound("g", vec![a, b])),
            (inner.clone(), inner.clone(), inner).prop_map(|(a, b, c)| Term::compound("h", vec![a, b, c])),
        ]
    })
}

/// True when `a` and `b` are equal up to a bijective variable renaming.
fn variant(a: &Term, b: &Term) -> bool {
    fn go(a: &Term, b: &Term, fw: &mut BTreeMap<String, String>, bw: &mut BTreeMap<String, String>) -> bool {
        match (a, b) {
            (Term::Var(x), Term::Var(y)) => {
                let (x, y) = (x.to_string(), y.to_string());
                match (fw.get(&x), bw.get(&y)) {
                    (Some(y0), Some(x0)) => *y0 == y && *x0 == x,
                    (None, None) => {
                        fw.insert(x.clone(), y.clone());
                        bw.insert(y, x);
                        true
                    }
                    _ => false,
                }
            }
            (Term::Const(x), Term::Const(y)) => x == y,
            (Term::Compound(f, xs), Term::Compound(g, ys)) => {
                f == g && xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| go(x, y, fw, bw))
            }
            _ => false,
        }
    }
    go(a, b, &mut BTreeMap::new(), &mut BTreeMap::new())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn mgu_makes_terms_identical(a in arb_term(), b in arb_term()) {
        if let Some(s) = unify(&a, &b) {
            prop_assert_eq!(s.apply(&a), s.apply(&b));
        }
    }

    #[test]
    fn unification_is_symmetric(a in arb_term(), b in arb_term()) {
        let ab = unify(&a, &b);
        let ba = unify(&b, &a);
        prop_assert_eq!(ab.is_some(), ba.is_some());
        if let (Some(s1), Some(s2)) = (ab, ba) {
            prop_assert!(variant(&s1.apply(&a), &s2.apply(&a)));
        }
    }

    #[test]
    fn occurs_check_blocks_cycles(inner in arb_term()) {
        let cyclic = Term::compound("g", vec![Term::var("X"), inner]);
        prop_assert!(unify(&Term::var("X"), &cyclic).is_none());
    }

    #[test]
    fn unifier_is_idempotent(a in arb_term(), b in arb_term()) {
        if let Some(s) = unify(&a, &b) {
            let once = s.apply(&a);
            prop_assert_eq!(s.apply(&once), once);
        }
    }
}

fn arb_atom() -> impl Strategy<Value = Term> {
    (prop::sample::select(vec!["p", "q", "rel"]), prop::collection::vec(arb_term(), 1..4))
        .prop_map(|(f, args)| Term::compound(f, args))
}

fn arb_clause() -> impl Strategy<Value = Clause> {
    (arb_atom(), prop::collection::vec((arb_atom(), any::<bool>()), 0..4)).prop_map(|(head, body)| {
        Clause::rule(head, body.into_iter().map(|(a, neg)| Literal { atom: a, negated: neg }).collect())
    })
}

proptest! {
    #[test]
    fn printed_programs_parse_back(clauses in prop::collection::vec(arb_clause(), 1..6)) {
        let text: String = clauses.iter().map(|c| format!("{c}\n")).collect();
        let parsed = parse_program(&text).unwrap();
        prop_assert_eq!(parsed.clauses, clauses);
    }
}

/// Random function-free programs: facts over {a,b,c,d} for e/2 and k/1,
/// plus a few range-restricted rules.
fn arb_datalog() -> impl Strategy<Value = Program> {
    let consts = ["a", "b", "c", "d"];
    let facts = prop::collection::vec((0usize..4, 0usize..4), 1..8);
    let unary = prop::collection::vec(0usize..4, 0..4);
    let rules = prop::collection::vec(0usize..5, 1..4);
    (facts, unary, rules).prop_map(move |(facts, unary, rules)| {
        let mut text = String::new();
        for (x, y) in facts {
            text += &format!("e({},{}).\n", consts[x], consts[y]);
        }
        for x in unary {
            text += &format!("k({}).\n", consts[x]);
        }
        let templates = [
            "r(X,Y) :- e(X,Y).",
            "r(X,Z) :- e(X,Y), e(Y,Z).",
            "r(X,Y) :- e(Y,X), k(X).",
            "r(X,Z) :- e(X,Y), r(Y,Z).",
            "s(X) :- r(X,Y), k(Y).",
        ];
        for r in rules {
            text += templates[r];
            text.push('\n');
        }
        Program::from_parsed(parse_program(&text).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// SLD answers agree with the bottom-up least model: always sound, and
    /// complete whenever no branch was cut by the depth bound.
    #[test]
    fn sld_agrees_with_least_model(p in arb_datalog()) {
        let universe = universe_of(&p, &[]);
        let model = least_model(&p, &universe).unwrap();
        let q = vec![Literal::pos(Term::compound("r", vec![Term::var("X"), Term::var("Y")]))];
        let sols = solve(&p, &q, Limits::new(24, 100_000)).unwrap();
        let mut found = BTreeSet::new();
        for s in &sols.answers {
            let atom = s.apply(&q[0].atom);
            prop_assert!(model.contains(&atom), "unsound answer {}", atom);
            found.insert(atom);
        }
        if !sols.depth_exhausted {
            let expected: BTreeSet<Term> = model
                .iter()
                .filter(|t| t.indicator().map(|(n, a)| &*n == "r" && a == 2).unwrap_or(false))
                .cloned()
                .collect();
            prop_assert_eq!(found, expected);
        }
    }
}
