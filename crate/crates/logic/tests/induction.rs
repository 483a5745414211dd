use std::collections::BTreeSet;
use std::sync::Arc;

use spinereport_logic::{
    entails, induce, least_model, parse_program, parse_term, universe_of, Clause, InduceConfig, Metarule, Name,
    Program, Term,
};

fn family() -> Program {
    let src = "
        parent/2. spouse/2.
        parent(ann,bob). parent(ann,bea). parent(bob,cid). parent(bob,cat).
        parent(bea,dan). parent(cid,eve). parent(dan,fay).
        spouse(ann,al). spouse(bob,bo).
    ";
    Program::from_parsed(parse_program(src).unwrap())
}

fn atoms(list: &[&str]) -> Vec<Term> {
    list.iter().map(|s| parse_term(s).unwrap()).collect()
}

/// Consistency of a candidate clause set, judged on the least model.
fn consistent(bg: &Program, clauses: &[Clause], pos: &[Term], neg: &[Term]) -> bool {
    let p = bg.with(clauses);
    let universe = universe_of(&p, pos);
    let model = least_model(&p, &universe).unwrap();
    pos.iter().all(|e| model.contains(e)) && neg.iter().all(|e| !model.contains(e))
}

#[test]
fn grandparent_matches_exhaustive_metarule_enumeration() {
    let bg = family();
    let pos = atoms(&["gp(ann,cid)", "gp(ann,cat)", "gp(ann,dan)", "gp(bob,eve)", "gp(bea,fay)"]);
    let neg = atoms(&["gp(ann,bob)", "gp(bob,cid)", "gp(ann,eve)", "gp(cid,ann)"]);

    // Oracle: every <=1-clause instantiation of the chain metarule, in the
    // same predicate order the learner enumerates.
    let chain = Metarule::chain();
    let preds: Vec<Name> = bg.predicates().into_iter().filter(|(_, a)| *a == 2).map(|(n, _)| n).collect();
    let mut consistent_instances = Vec::new();
    for q in &preds {
        for r in &preds {
            let clause = chain.instantiate(&[Arc::from("gp"), q.clone(), r.clone()]);
            if consistent(&bg, std::slice::from_ref(&clause), &pos, &neg) {
                consistent_instances.push(clause);
            }
        }
    }
    assert_eq!(consistent_instances.len(), 1, "toy corpus should pin down one chain clause");

    let out = induce(&bg, &pos, &neg, &[chain], InduceConfig { max_clauses: 1, ..Default::default() }).unwrap();
    let h = out.hypothesis().expect("hypothesis within one clause");
    assert_eq!(h.clauses, consistent_instances);
    for e in &pos {
        assert!(entails(&bg, &h.clauses, e).unwrap());
    }
    for e in &neg {
        assert!(!entails(&bg, &h.clauses, e).unwrap());
    }
}

#[test]
fn induction_is_deterministic_and_minimal() {
    let bg = family();
    let pos = atoms(&["gp(ann,cid)", "gp(bob,eve)"]);
    let neg = atoms(&["gp(ann,bob)"]);
    let rules = [Metarule::identity(), Metarule::chain()];
    let a = induce(&bg, &pos, &neg, &rules, InduceConfig::default()).unwrap();
    let b = induce(&bg, &pos, &neg, &rules, InduceConfig::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.hypothesis().unwrap().clauses.len(), 1);
}

#[test]
fn induced_hypothesis_leaves_no_model_for_negated_positive() {
    // Inverse entailment, checked by grounding: e is in the least model of
    // B ∪ H, so B ∪ H ∪ {¬e} has no Herbrand model.
    let bg = family();
    let pos = atoms(&["gp(ann,cid)", "gp(ann,dan)"]);
    let neg = atoms(&["gp(ann,bob)"]);
    let h = induce(&bg, &pos, &neg, &[Metarule::chain()], InduceConfig::default())
        .unwrap()
        .hypothesis()
        .cloned()
        .unwrap();
    let p = bg.with(&h.clauses);
    let model = least_model(&p, &universe_of(&p, &pos)).unwrap();
    let needed: BTreeSet<_> = pos.iter().cloned().collect();
    assert!(needed.is_subset(&model));
}
