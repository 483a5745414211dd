use std::path::PathBuf;

use proptest::prelude::*;
use spinereport_core::labeling::{label_map, truth_ledger, LabelingConfig, LedgerEntry, StructureLedger, Verdict};
use spinereport_core::phantom::{extract_relation_facts, generate_phantom};
use spinereport_core::report::{
    attribute_causes, causal_background, evaluate_report_keywords, induce_hypothesis, parse_hypothesis,
    reference_causes, reference_hypothesis, render_report, report_from_ledger, unsupported_attributions, Factor,
    Pattern, Template,
};
use spinereport_core::segmap::Kind;
use spinereport_logic::{entails, parse_term};

const VERTS: [&str; 5] = ["L1", "L2", "L3", "L4", "L5"];
const LEVELS: [&str; 4] = ["L1-L2", "L2-L3", "L3-L4", "L4-L5"];

fn entry(key: &str, abnormal: bool, id: usize) -> LedgerEntry {
    let verdict = if abnormal { Verdict::Abnormal } else { Verdict::Normal };
    LedgerEntry { key: key.into(), verdict, component_id: id, centroid: (id as f64, 0.0) }
}

/// Four-level ledger with the listed structures abnormal.
fn ledger(abnormal: &[(Kind, &str)]) -> StructureLedger {
    let bad = |k: Kind, key: &str| abnormal.contains(&(k, key));
    StructureLedger {
        vertebrae: VERTS.iter().enumerate().map(|(i, v)| entry(v, bad(Kind::Vertebra, v), i)).collect(),
        discs: LEVELS.iter().enumerate().map(|(i, v)| entry(v, bad(Kind::Disc, v), 10 + i)).collect(),
        foramina: LEVELS.iter().enumerate().map(|(i, v)| entry(v, bad(Kind::Foramen, v), 20 + i)).collect(),
    }
}

fn causes_at(findings: &[spinereport_core::report::Finding], key: &str) -> Vec<String> {
    let f = findings.iter().find(|f| f.kind == Kind::Foramen && f.key == key).unwrap();
    f.attributions.iter().map(ToString::to_string).collect()
}

#[test]
fn three_abnormal_level_emits_the_canonical_sentence() {
    let l = ledger(&[(Kind::Disc, "L3-L4"), (Kind::Vertebra, "L3"), (Kind::Foramen, "L3-L4")]);
    let r = report_from_ledger("case", &l, &causal_background(), &reference_hypothesis(), &Template::v1()).unwrap();
    let s = r.sentences.iter().find(|s| s.level == "L3-L4").unwrap();
    assert_eq!(
        s.text,
        "At L3-L4, the intervertebral disc has obvious degenerative changes. The above vertebra also has \
         deformation changes. They lead to the neural foraminal stenosis to a certain extent."
    );
}

#[test]
fn abnormal_disc_and_lower_vertebra_are_both_attributed() {
    let l = ledger(&[(Kind::Disc, "L4-L5"), (Kind::Vertebra, "L5"), (Kind::Foramen, "L4-L5")]);
    let f = attribute_causes(&l, &causal_background(), &reference_hypothesis()).unwrap();
    assert_eq!(causes_at(&f, "L4-L5"), ["IDD at L4-L5", "LVD at L5"]);
    assert!(f.iter().filter(|x| x.key != "L4-L5" || x.kind != Kind::Foramen).all(|x| x.attributions.is_empty()));
}

#[test]
fn stenosis_with_normal_flanks_is_attributed_to_others() {
    let l = ledger(&[(Kind::Foramen, "L2-L3")]);
    let f = attribute_causes(&l, &causal_background(), &reference_hypothesis()).unwrap();
    assert_eq!(causes_at(&f, "L2-L3"), ["others"]);
    let r = render_report("case", &f, &Template::v1()).unwrap();
    assert!(r.sentences[1].text.contains("Other factors"), "{}", r.sentences[1].text);
}

#[test]
fn all_normal_ledger_has_no_attributions_and_says_so() {
    let l = ledger(&[]);
    let f = attribute_causes(&l, &causal_background(), &reference_hypothesis()).unwrap();
    assert!(f.iter().all(|x| x.attributions.is_empty()));
    assert_eq!(f.len(), 13);
    let r = render_report("case", &f, &Template::v1()).unwrap();
    assert_eq!(r.summary, "No abnormal findings at any level.");
    assert!(r.to_text().contains("No abnormal findings at any level."));
}

#[test]
fn normal_foramen_next_to_abnormal_disc_carries_the_risk_sentence() {
    let l = ledger(&[(Kind::Disc, "L1-L2")]);
    let r = report_from_ledger("case", &l, &causal_background(), &reference_hypothesis(), &Template::v1()).unwrap();
    assert!(r.sentences[0].text.contains("has a large possibility to be stenosis"));
}

#[test]
fn hypothesis_entailing_the_negative_control_is_rejected() {
    let corrupt = parse_hypothesis("cause(A,B,C) :- dis(A), dis(B).").unwrap();
    let err = attribute_causes(&ledger(&[]), &causal_background(), &corrupt).unwrap_err();
    assert!(err.to_string().contains("negative control"), "{err}");
}

#[test]
fn stenosis_without_any_entailed_cause_is_a_fault() {
    let l = ledger(&[(Kind::Foramen, "L2-L3"), (Kind::Disc, "L2-L3")]);
    assert!(attribute_causes(&l, &causal_background(), &[]).is_err());
}

#[test]
fn template_covers_all_eight_patterns_and_missing_rules_fault() {
    let t = Template::v1();
    for p in Pattern::ALL {
        let rule = t.rule(p).unwrap();
        assert!(rule.starts_with("At {level}, "), "{p}");
        assert_eq!(rule.contains("{Vertebra}") || rule.contains("{vertebra}"), p.vertebra, "{p}");
    }
    let partial = Template::parse("test", "NNN = At {level}, fine.\n").unwrap();
    let l = ledger(&[(Kind::Disc, "L1-L2"), (Kind::Foramen, "L1-L2")]);
    let f = attribute_causes(&l, &causal_background(), &reference_hypothesis()).unwrap();
    let err = render_report("case", &f, &partial).unwrap_err();
    assert!(err.to_string().contains("disc=abnormal vertebra=normal foramen=abnormal"), "{err}");
    assert!(Template::parse("bad", "NXN = text").is_err());
    assert!(Template::parse("dup", "NNN = a\nNNN = b").is_err());
}

#[test]
fn every_pattern_renders_at_every_level() {
    for p in Pattern::ALL {
        for (i, level) in LEVELS.iter().enumerate() {
            let mut bad = Vec::new();
            if p.disc {
                bad.push((Kind::Disc, *level));
            }
            if p.vertebra {
                bad.push((Kind::Vertebra, VERTS[i + 1]));
            }
            if p.foramen {
                bad.push((Kind::Foramen, *level));
            }
            let r = report_from_ledger("case", &ledger(&bad), &causal_background(), &reference_hypothesis(), &Template::v1())
                .unwrap();
            let s = &r.sentences[i];
            assert!(!s.text.contains('{'), "{}", s.text);
            if p.vertebra {
                assert!(s.text.contains("below vertebra"), "{}", s.text);
            }
        }
    }
}

#[test]
fn rendering_is_byte_identical_across_calls() {
    let p = generate_phantom(31, 0.6, (128, 128)).unwrap();
    let l = truth_ledger(&p);
    let a = report_from_ledger("x", &l, &causal_background(), &reference_hypothesis(), &Template::v1()).unwrap();
    let b = report_from_ledger("x", &l, &causal_background(), &reference_hypothesis(), &Template::v1()).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(spinereport_core::report::Report::from_json(&a.to_json()).unwrap(), a);
}

#[test]
fn keyword_scores_are_perfect_from_truth_and_drop_by_one_triple() {
    let mut l = ledger(&[(Kind::Disc, "L3-L4")]);
    l.discs.insert(0, entry("T12-L1", false, 9));
    l.discs.push(entry("L5-S1", false, 14));
    l.foramina.push(entry("L5-S1", false, 24));
    assert_eq!(l.verdicts().len(), 16);
    let r = report_from_ledger("case", &l, &causal_background(), &reference_hypothesis(), &Template::v1()).unwrap();
    let k = evaluate_report_keywords(&r, &l);
    assert_eq!((k.structures.precision(), k.structures.recall()), (1.0, 1.0));
    assert_eq!((k.causes.precision(), k.causes.recall()), (1.0, 1.0));

    let mut flipped = r.clone();
    flipped.findings[7].verdict = Verdict::Abnormal;
    let k = evaluate_report_keywords(&flipped, &l);
    assert_eq!(k.structures.recall(), 15.0 / 16.0);
    assert_eq!(k.structures.precision(), 15.0 / 16.0);
}

#[test]
fn truth_reports_attribute_exactly_the_reference_causes() {
    let bg = causal_background();
    let h = reference_hypothesis();
    for seed in 0..200 {
        let p = generate_phantom(seed, 0.5, (128, 128)).unwrap();
        let l = truth_ledger(&p);
        let r = report_from_ledger("x", &l, &bg, &h, &Template::v1()).unwrap();
        let k = evaluate_report_keywords(&r, &l);
        assert_eq!(k.causes.hits, k.causes.reference, "seed {seed}");
        assert_eq!(k.causes.hits, k.causes.predicted, "seed {seed}");
        assert!(unsupported_attributions(&r, &bg, &h).unwrap().is_empty());
        for f in &r.findings {
            let stenotic = f.kind == Kind::Foramen && f.verdict == Verdict::Abnormal;
            assert_eq!(!f.attributions.is_empty(), stenotic, "seed {seed} {} {}", f.kind, f.key);
        }
        assert_eq!(reference_causes(&l).len(), k.causes.reference);
    }
}

#[test]
fn induced_hypothesis_gives_the_same_findings_as_the_reference() {
    let facts: Vec<_> = (0..60).map(|s| extract_relation_facts(&generate_phantom(s, 0.5, (128, 128)).unwrap())).collect();
    let bg = causal_background();
    let h = induce_hypothesis(&bg, &facts).unwrap();
    for seed in 100..140 {
        let l = truth_ledger(&generate_phantom(seed, 0.5, (128, 128)).unwrap());
        let a = attribute_causes(&l, &bg, &h.clauses).unwrap();
        let b = attribute_causes(&l, &bg, &reference_hypothesis()).unwrap();
        assert_eq!(a, b, "seed {seed}");
    }
}

#[test]
fn attributions_are_entailed_atoms() {
    let l = ledger(&[(Kind::Disc, "L4-L5"), (Kind::Vertebra, "L4"), (Kind::Vertebra, "L5"), (Kind::Foramen, "L4-L5")]);
    let bg = causal_background();
    let h = reference_hypothesis();
    let f = attribute_causes(&l, &bg, &h).unwrap();
    let foramen = f.iter().find(|x| x.kind == Kind::Foramen && x.key == "L4-L5").unwrap();
    let factors: Vec<Factor> = foramen.attributions.iter().map(|a| a.factor).collect();
    assert_eq!(factors, [Factor::Idd, Factor::Lvd, Factor::Lvd]);
    for a in &foramen.attributions {
        assert!(entails(&bg, &h, &parse_term(&a.evidence).unwrap()).unwrap());
    }
    let r = render_report("x", &f, &Template::v1()).unwrap();
    assert!(r.sentences[3].text.contains("Both adjacent vertebrae also have"), "{}", r.sentences[3].text);
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Labeling of the truth map, then the reference hypothesis and template v1.
fn golden_report(seed: u64) -> spinereport_core::report::Report {
    let p = generate_phantom(seed, 0.5, (128, 128)).unwrap();
    let (_, out) = label_map(&p.truth, &LabelingConfig::default()).unwrap();
    report_from_ledger(&format!("phantom-{seed}"), &out.ledger, &causal_background(), &reference_hypothesis(), &Template::v1())
        .unwrap()
}

pub const GOLDEN_SEEDS: [u64; 5] = [7, 42, 99, 1234, 2024];

#[test]
fn golden_reports_match_byte_for_byte() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for seed in GOLDEN_SEEDS {
        let r = golden_report(seed);
        for (ext, body) in [("txt", r.to_text()), ("json", r.to_json())] {
            let path = golden_dir().join(format!("report_seed{seed}.{ext}"));
            if update {
                std::fs::write(&path, &body).unwrap();
            }
            let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(body, want, "{}", path.display());
        }
    }
}

fn random_ledger() -> impl Strategy<Value = StructureLedger> {
    proptest::collection::vec(any::<bool>(), 13).prop_map(|bits| {
        let mut bad = Vec::new();
        for (i, v) in VERTS.iter().enumerate() {
            if bits[i] {
                bad.push((Kind::Vertebra, *v));
            }
        }
        for (i, l) in LEVELS.iter().enumerate() {
            if bits[5 + i] {
                bad.push((Kind::Disc, *l));
            }
            if bits[9 + i] {
                bad.push((Kind::Foramen, *l));
            }
        }
        ledger(&bad)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn every_stenotic_sentence_is_backed_by_entailed_causes(l in random_ledger()) {
        let bg = causal_background();
        let h = reference_hypothesis();
        let r = report_from_ledger("p", &l, &bg, &h, &Template::v1()).unwrap();
        prop_assert!(unsupported_attributions(&r, &bg, &h).unwrap().is_empty());
        for s in &r.sentences {
            for &i in &s.findings {
                let f = &r.findings[i];
                if f.kind == Kind::Foramen && f.verdict == Verdict::Abnormal {
                    prop_assert!(!f.attributions.is_empty());
                }
            }
        }
        let k = evaluate_report_keywords(&r, &l);
        prop_assert_eq!((k.structures.precision(), k.structures.recall()), (1.0, 1.0));
        prop_assert_eq!((k.causes.precision(), k.causes.recall()), (1.0, 1.0));
    }
}
