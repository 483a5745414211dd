//! Acceptance suite. Runs every criterion in order and prints one
//! `PASS`/`FAIL` line per criterion; exits non-zero when any fails.
//!
//! `cargo test -p spinereport-validation --test acceptance -- 2 4` runs a subset.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spinereport_cli::pipeline::{self, Layout};
use spinereport_cli::PipelineConfig;
use spinereport_core::autodiff::{ConvGeom, Graph, Var};
use spinereport_core::gradcheck;
use spinereport_core::labeling::{expected_ledger, label_map, truth_ledger, LabelingConfig, SPATIAL_RULES};
use spinereport_core::loss::{discriminator_loss, generator_loss};
use spinereport_core::metrics::labeling_accuracy;
use spinereport_core::phantom::{extract_relation_facts, generate_phantom, Structure};
use spinereport_core::report::{
    causal_background, evaluate_report_keywords, induce_hypothesis, reference_hypothesis, report_from_ledger,
    unsupported_attributions, Counts, Template,
};
use spinereport_core::segmap::{Kind, NUM_CLASSES};
use spinereport_core::sgr::{self, normalize_adjacency, SgrConfig, SgrGraphState, SgrVars, M};
use spinereport_core::tensor::Tensor;
use spinereport_logic::{
    induce, least_model, parse_program, parse_query, parse_term, solve, unify, universe_of, Clause, InduceConfig,
    Limits, Metarule, Name, Program, Term,
};
use spinereport_oracles::{conv as conv_oracle, linalg};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::new(shape, rand_vec(rng, shape.iter().product())).unwrap()
}

/// Scalar probe with a distinct weight per element.
fn weighted_sum(g: &mut Graph<f64>, y: Var) -> spinereport_core::Result<Var> {
    let n = g.value(y).len();
    let w = Tensor::new(g.shape(y), (0..n).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4).collect())?;
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.sum(p)
}

const INSTANCES: u64 = 20;

/// Worst relative error over `INSTANCES` random instances.
fn fd_worst<F>(shapes: &[&[usize]], seed: u64, build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> spinereport_core::Result<Var>,
{
    (0..INSTANCES)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + i);
            let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
            gradcheck::check(&inputs, 1e-5, &build).unwrap().rel_error
        })
        .fold(0.0, f64::max)
}

fn random_hard_graph(rng: &mut ChaCha8Rng, symmetric: bool) -> Vec<f64> {
    let mut e = vec![0.0; M * M];
    for i in 0..M {
        for j in 0..M {
            if i != j && (!symmetric || i < j) && rng.gen_bool(0.5) {
                e[i * M + j] = 1.0;
                if symmetric {
                    e[j * M + i] = 1.0;
                }
            }
        }
    }
    e
}

/// SGR inputs: `x` then the eight weights, plus fixed priors and graph.
struct SgrCase {
    cfg: SgrConfig,
    inputs: Vec<Tensor<f64>>,
    v: Vec<f64>,
    e_hard: Vec<f64>,
}

impl SgrCase {
    fn random(rng: &mut ChaCha8Rng, cfg: SgrConfig, hw: usize, x_scale: f64) -> Self {
        let mut inputs = vec![Tensor::new(&[hw, cfg.d_local], rand_vec(rng, hw * cfg.d_local).iter().map(|v| v * x_scale).collect()).unwrap()];
        for (_, s) in cfg.weight_shapes() {
            inputs.push(rand_tensor(rng, &s));
        }
        let v = (0..M * cfg.n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let e_hard = random_hard_graph(rng, false);
        SgrCase { cfg, inputs, v, e_hard }
    }

    fn forward(&self, g: &mut Graph<f64>, l: &[Var]) -> spinereport_core::Result<sgr::SgrOutput> {
        let state = SgrGraphState::<f64>::new(&self.v, self.cfg.n, &self.e_hard)?;
        let v = g.constant(state.v.clone());
        let e_norm = g.constant(state.e_norm.clone());
        let p = SgrVars { w_a: l[1], w_lsa: l[2], w_g: l[3], w_glm: l[4], w_proj: l[5], w_s_node: l[6], w_s_pixel: l[7], w_s: l[8], v, e_norm };
        sgr::sgr_forward(g, l[0], &p)
    }
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst: Vec<(&str, f64)> = Vec::new();
    worst.push((
        "conv2d",
        fd_worst(&[&[2, 2, 6, 6], &[3, 2, 4, 4], &[3]], 1, |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], ConvGeom::new(2, 1, 1))?;
            weighted_sum(g, y)
        }),
    ));
    worst.push((
        "dilated_conv2d",
        fd_worst(&[&[1, 2, 9, 9], &[2, 2, 3, 3], &[2]], 2, |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], ConvGeom::new(1, 2, 2))?;
            weighted_sum(g, y)
        }),
    ));
    worst.push((
        "transposed_conv2d",
        fd_worst(&[&[2, 3, 3, 3], &[3, 2, 4, 4], &[2]], 3, |g, v| {
            let y = g.conv_transpose2d(v[0], v[1], v[2], ConvGeom::new(2, 1, 1))?;
            weighted_sum(g, y)
        }),
    ));
    worst.push((
        "batch_norm",
        fd_worst(&[&[3, 2, 3, 3], &[2], &[2]], 4, |g, v| {
            let (y, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
            weighted_sum(g, y)
        }),
    ));
    let cfg = SgrConfig { d_local: 3, n: 4, hidden: 3 };
    let sgr_worst = (0..INSTANCES)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(5000 + i);
            let hw = rng.gen_range(2..7);
            let case = SgrCase::random(&mut rng, cfg.clone(), hw, 1.0);
            let probe = Tensor::new(&[hw, cfg.d_local], rand_vec(&mut rng, hw * cfg.d_local)).unwrap();
            gradcheck::check(&case.inputs, 1e-5, |g, l| {
                let out = case.forward(g, l)?;
                let r = g.constant(probe.clone());
                let prod = g.mul(out.x_dec, r)?;
                g.sum(prod)
            })
            .unwrap()
            .rel_error
        })
        .fold(0.0, f64::max);
    worst.push(("sgr_forward", sgr_worst));
    let weights = [0.3, 1.1, 0.9, 1.4, 0.6, 1.0, 1.7];
    let targets: Vec<u8> = (0..8).map(|i| (i * 3 % NUM_CLASSES) as u8).collect();
    worst.push((
        "generator_loss",
        fd_worst(&[&[2, NUM_CLASSES, 2, 2], &[2]], 6, |g, v| {
            generator_loss(g, v[0], &targets, &weights, Some(v[1]), 0.7).map(|(t, _)| t)
        }),
    ));
    worst.push(("discriminator_loss", fd_worst(&[&[3], &[3]], 7, |g, v| discriminator_loss(g, v[0], v[1]))));
    let elapsed = start.elapsed();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let detail = format!(
        "{} ops x {INSTANCES} instances, worst rel error {max:.2e}, {:.1}s",
        worst.len(),
        elapsed.as_secs_f64()
    );
    for (op, e) in &worst {
        ensure!(*e <= 1e-3, "{op}: relative error {e:.3e} > 1e-3");
    }
    ensure!(elapsed < Duration::from_secs(120), "{detail}: over the 2 min budget");
    Ok(detail)
}

fn c2_dilation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for rate in [2, 4, 8, 16] {
        let x = rand_tensor(&mut rng, &[2, 3, 40, 40]);
        let w = rand_tensor(&mut rng, &[2, 3, 3, 3]);
        let b = rand_tensor(&mut rng, &[2]);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv2d(xv, wv, bv, ConvGeom::new(1, rate, rate)).map_err(|e| e.to_string())?;
        let (wide, wshape) = conv_oracle::zero_insert(w.data(), [2, 3, 3, 3], rate);
        let (want, shape) = conv_oracle::conv2d(x.data(), [2, 3, 40, 40], &wide, wshape, b.data(), 1, rate, 1);
        ensure!(g.shape(y) == shape, "rate {rate}: shape {:?} vs oracle {shape:?}", g.shape(y));
        let err = g.data(y).iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure!(err <= 1e-10, "rate {rate}: max abs error {err:.3e}");
        worst = worst.max(err);
    }
    Ok(format!("rates 2/4/8/16 match the zero-inserted kernel, max abs error {worst:.1e}"))
}

fn c3_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut top = 0.0f64;
    for t in 0..1000 {
        let n = normalize_adjacency(&random_hard_graph(&mut rng, true), M);
        // Symmetric, so the operator 2-norm is the largest |eigenvalue|.
        let norm = linalg::symmetric_eigenvalues(&n, M).iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        ensure!(norm <= 1.0 + 1e-9, "graph {t}: norm {norm}");
        top = top.max(norm);
    }
    for t in 0..1000 {
        let e = random_hard_graph(&mut rng, false);
        let n = normalize_adjacency(&e, M);
        let deg: Vec<f64> = (0..M).map(|i| 1.0 + e[i * M..(i + 1) * M].iter().sum::<f64>()).collect();
        for i in 0..M {
            let row: f64 = (0..M).map(|j| n[i * M + j] * deg[j].sqrt() / deg[i].sqrt()).sum();
            ensure!((row - 1.0).abs() < 1e-12, "directed graph {t}: similar matrix row {i} sums to {row}");
        }
    }
    let chain = normalize_adjacency(&[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0], 3);
    let s6 = 1.0 / 6f64.sqrt();
    let want = [0.5, s6, 0.0, s6, 1.0 / 3.0, s6, 0.0, s6, 0.5];
    let err = chain.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure!(err <= 1e-12, "3-node chain off by {err:.3e}");
    Ok(format!("1000 undirected graphs, max norm {top:.12}; 1000 directed graphs row-stochastic after similarity; chain error {err:.1e}"))
}

fn c4_attention() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut worst = 0.0f64;
    for t in 0..100 {
        let cfg = SgrConfig { d_local: rng.gen_range(1..6), n: rng.gen_range(1..6), hidden: rng.gen_range(1..6) };
        let hw = rng.gen_range(1..40);
        let case = SgrCase::random(&mut rng, cfg, hw, 3.0);
        let mut g = Graph::new();
        let leaves: Vec<Var> = case.inputs.iter().map(|x| g.constant(x.clone())).collect();
        let out = case.forward(&mut g, &leaves).map_err(|e| e.to_string())?;
        let (a_l, a_g) = (g.data(out.a_l), g.data(out.a_g));
        for i in 0..hw {
            let s: f64 = (0..M).map(|m| a_l[m * hw + i]).sum();
            worst = worst.max((s - 1.0).abs());
            ensure!((s - 1.0).abs() <= 1e-9, "instance {t}: local attention column {i} sums to {s}");
        }
        for m in 0..M {
            let s: f64 = a_g[m * hw..(m + 1) * hw].iter().sum();
            worst = worst.max((s - 1.0).abs());
            ensure!((s - 1.0).abs() <= 1e-9, "instance {t}: global attention row {m} sums to {s}");
        }
    }
    Ok(format!("100 instances, max deviation {worst:.1e}"))
}

/// Every file under `root` with its bytes, keyed by relative path.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn run_pipeline(cfg: &PipelineConfig, dir: &Path) -> Result<(spinereport_core::metrics::MetricsRecord, Duration), String> {
    let start = Instant::now();
    let m = pipeline::cmd_run(cfg, &Layout::new(dir)).map_err(|e| format!("{e:#}"))?;
    Ok((m, start.elapsed()))
}

fn c5_segmentation() -> Outcome {
    // 250 phantoms at the default 0.8 split: 200 train, 50 test.
    let base = PipelineConfig::parse("corpus_size=250\n").map_err(|e| e.to_string())?;
    let ablation = PipelineConfig::parse("corpus_size=250\nlambda=0\nuse_sgr=false\n").map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (full, t_full) = run_pipeline(&base, &dir.path().join("full"))?;
    let (abl, t_abl) = run_pipeline(&ablation, &dir.path().join("ablation"))?;
    let detail = format!(
        "full: acc {:.4} dice {:.4} in {:.0}s; ablation (lambda=0, no SGR): acc {:.4} dice {:.4} in {:.0}s; margin {:+.4}",
        full.pixel_accuracy,
        full.mean_dice,
        t_full.as_secs_f64(),
        abl.pixel_accuracy,
        abl.mean_dice,
        t_abl.as_secs_f64(),
        full.mean_dice - abl.mean_dice
    );
    ensure!(full.images == 50, "{detail}; expected 50 test images, got {}", full.images);
    ensure!(full.pixel_accuracy >= 0.95, "{detail}; pixel accuracy below 0.95");
    ensure!(full.mean_dice >= 0.80, "{detail}; mean Dice below 0.80");
    ensure!(full.mean_dice >= abl.mean_dice + 0.01, "{detail}; full run does not beat the ablation by 0.01");
    ensure!(t_full <= Duration::from_secs(1800), "{detail}; over 30 min");
    Ok(detail)
}

fn arb_term(rng: &mut ChaCha8Rng, depth: usize) -> Term {
    if depth == 0 || rng.gen_bool(0.4) {
        return if rng.gen_bool(0.5) {
            Term::constant(["a", "b", "c"][rng.gen_range(0..3)])
        } else {
            Term::var(["X", "Y", "Z", "W"][rng.gen_range(0..4)])
        };
    }
    let arity = rng.gen_range(1..4);
    let args = (0..arity).map(|_| arb_term(rng, depth - 1)).collect();
    Term::compound(["f", "g", "h"][arity - 1], args)
}

/// Equal up to a bijective variable renaming.
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

fn proves(program: &Program, query: &str) -> Result<bool, String> {
    let q = parse_query(query).map_err(|e| e.to_string())?;
    Ok(solve(program, &q, Limits::new(32, 1)).map_err(|e| e.to_string())?.succeeded())
}

fn c6_logic() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut unified = 0;
    for i in 0..10_000 {
        let (a, b) = (arb_term(&mut rng, 3), arb_term(&mut rng, 3));
        let ab = unify(&a, &b);
        let ba = unify(&b, &a);
        ensure!(ab.is_some() == ba.is_some(), "pair {i}: unification not symmetric on {a} / {b}");
        if let (Some(s1), Some(s2)) = (ab, ba) {
            unified += 1;
            ensure!(s1.apply(&a) == s1.apply(&b), "pair {i}: mgu does not equate {a} and {b}");
            ensure!(variant(&s1.apply(&a), &s2.apply(&a)), "pair {i}: unifiers differ beyond renaming");
        }
        let cyclic = Term::compound("g", vec![Term::var("X"), a.clone()]);
        ensure!(unify(&Term::var("X"), &cyclic).is_none(), "pair {i}: occurs check missed X = {cyclic}");
    }

    let mut sep_instances = 0;
    for seed in 0..200 {
        let p = generate_phantom(seed, 0.5, (128, 128)).map_err(|e| e.to_string())?;
        let facts = extract_relation_facts(&p);
        let kind: BTreeMap<String, Kind> = p.structures.iter().map(|s| (s.instance(), s.kind)).collect();
        let mut src = String::from(SPATIAL_RULES);
        for (a, b) in facts.adjacent_pairs() {
            if kind[&a] != Kind::Foramen && kind[&b] != Kind::Foramen {
                src.push_str(&format!("touch({a},{b}).\n"));
            }
        }
        let discs: Vec<&Structure> = p.of_kind(Kind::Disc).collect();
        for a in &discs {
            for b in &discs {
                if a.instance() != b.instance() {
                    src.push_str(&format!("same({},{}).\n", a.instance(), b.instance()));
                }
            }
        }
        let program = Program::from_parsed(parse_program(&src).map_err(|e| e.to_string())?);
        let mut column: Vec<&Structure> = p.structures.iter().filter(|s| s.kind != Kind::Foramen).collect();
        column.sort_by_key(|s| s.bbox.top);
        for w in column.windows(3).filter(|w| w[0].kind == Kind::Disc) {
            let q = format!("sep({},{},{})", w[0].instance(), w[1].instance(), w[2].instance());
            ensure!(proves(&program, &q)?, "phantom {seed}: {q} not provable");
            sep_instances += 1;
        }
    }

    let piano = Program::from_parsed(
        parse_program(&format!("{SPATIAL_RULES}touch(vertebra,disc).\nsame(disc,disc).\n")).map_err(|e| e.to_string())?,
    );
    ensure!(proves(&piano, "sep(disc,vertebra,disc)")?, "sep(disc,vertebra,disc) not provable");
    let kb = causal_background().with(&reference_hypothesis());
    ensure!(proves(&kb, "cause(idd,lvd,nfs)")?, "cause(idd,lvd,nfs) not provable");
    ensure!(!proves(&kb, "undefinedPredicate(idd)")?, "a query on an undefined predicate succeeded");
    Ok(format!(
        "10^4 term pairs ({unified} unifiable); {sep_instances} sep/3 instances over 200 phantoms; both quoted queries proved"
    ))
}

/// The ground `name/arity` consequences of `program` over its own constants.
fn consequences(program: &Program, name: &str, arity: usize) -> Result<BTreeSet<Term>, String> {
    let universe = universe_of(program, &[]);
    let model = least_model(program, &universe).map_err(|e| e.to_string())?;
    Ok(model.into_iter().filter(|t| matches!(t.indicator(), Some((ref n, a)) if n.as_ref() == name && a == arity)).collect())
}

fn c7_induction() -> Outcome {
    let start = Instant::now();
    let facts: Vec<_> = (0..160).map(|s| extract_relation_facts(&generate_phantom(s, 0.5, (128, 128)).unwrap())).collect();
    let bg = causal_background();
    let h = induce_hypothesis(&bg, &facts).map_err(|e| e.to_string())?;
    let t_cause = start.elapsed();
    let induced = consequences(&bg.with(&h.clauses), "cause", 3)?;
    let reference = consequences(&bg.with(&reference_hypothesis()), "cause", 3)?;
    ensure!(
        induced == reference,
        "induced {:?} differs from the reference on {:?}",
        h.clauses.iter().map(ToString::to_string).collect::<Vec<_>>(),
        induced.symmetric_difference(&reference).collect::<Vec<_>>()
    );
    ensure!(t_cause < Duration::from_secs(30), "cause/3 induction took {t_cause:?}");

    // Toy grandparent task against exhaustive chain-metarule enumeration.
    let start = Instant::now();
    let family = Program::from_parsed(
        parse_program(
            "parent/2. spouse/2.
             parent(ann,bob). parent(ann,bea). parent(bob,cid). parent(bob,cat).
             parent(bea,dan). parent(cid,eve). parent(dan,fay).
             spouse(ann,al). spouse(bob,bo).",
        )
        .map_err(|e| e.to_string())?,
    );
    let atoms = |l: &[&str]| -> Vec<Term> { l.iter().map(|s| parse_term(s).unwrap()).collect() };
    let pos = atoms(&["gp(ann,cid)", "gp(ann,cat)", "gp(ann,dan)", "gp(bob,eve)", "gp(bea,fay)"]);
    let neg = atoms(&["gp(ann,bob)", "gp(bob,cid)", "gp(ann,eve)", "gp(cid,ann)"]);
    let chain = Metarule::chain();
    let preds: Vec<Name> = family.predicates().into_iter().filter(|(_, a)| *a == 2).map(|(n, _)| n).collect();
    let mut oracle: Vec<Clause> = Vec::new();
    for q in &preds {
        for r in &preds {
            let clause = chain.instantiate(&[Arc::from("gp"), q.clone(), r.clone()]);
            let p = family.with(std::slice::from_ref(&clause));
            let model = least_model(&p, &universe_of(&p, &pos)).map_err(|e| e.to_string())?;
            if pos.iter().all(|e| model.contains(e)) && neg.iter().all(|e| !model.contains(e)) {
                oracle.push(clause);
            }
        }
    }
    let out = induce(&family, &pos, &neg, &[chain], InduceConfig { max_clauses: 1, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let learned = out.hypothesis().map(|h| h.clauses.clone()).unwrap_or_default();
    ensure!(oracle.len() == 1 && learned == oracle, "grandparent: learned {learned:?}, oracle {oracle:?}");
    let t_gp = start.elapsed();
    ensure!(t_gp < Duration::from_secs(30), "grandparent induction took {t_gp:?}");
    Ok(format!(
        "cause/3 from 160 phantoms equals the reference on {} ground atoms in {:.2}s; grandparent matches the oracle in {:.2}s",
        reference.len(),
        t_cause.as_secs_f64(),
        t_gp.as_secs_f64()
    ))
}

fn c8_labeling() -> Outcome {
    let cfg = LabelingConfig::default();
    let n = 500u64;
    let (mut clean, mut noisy, mut noisy_exact) = (0.0, 0.0, 0);
    for seed in 0..n {
        let p = generate_phantom(seed, 0.5, (128, 128)).map_err(|e| e.to_string())?;
        let truth = truth_ledger(&p);
        let (_, out) = label_map(&p.truth, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure!(out.ledger.verdicts() == expected_ledger(&p), "clean seed {seed}: ledger differs");
        clean += labeling_accuracy(&out.ledger, &truth);

        let mut rng = ChaCha8Rng::seed_from_u64(seed + 77);
        let mut map = p.truth.clone();
        for _ in 0..12 {
            let (h, w) = (rng.gen_range(1..4), rng.gen_range(1..4));
            let (r, c) = (rng.gen_range(0..128 - h), rng.gen_range(0..128 - w));
            let class = rng.gen_range(1..NUM_CLASSES as u8);
            for rr in r..r + h {
                for cc in c..c + w {
                    map.set(rr, cc, class);
                }
            }
        }
        let (_, out) = label_map(&map, &cfg).map_err(|e| format!("noisy seed {seed}: {e}"))?;
        noisy += labeling_accuracy(&out.ledger, &truth);
        noisy_exact += usize::from(out.ledger.verdicts() == expected_ledger(&p));
    }
    let (clean, noisy) = (clean / n as f64, noisy / n as f64);
    let detail = format!("clean accuracy {:.4}; noisy accuracy {noisy:.4} ({noisy_exact}/{n} ledgers exact)", clean);
    ensure!(clean == 1.0, "{detail}");
    ensure!(noisy >= 0.99, "{detail}");
    Ok(detail)
}

fn c9_reports() -> Outcome {
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden");
    let (bg, hyp, template) = (causal_background(), reference_hypothesis(), Template::v1());
    for seed in [7u64, 42, 99, 1234, 2024] {
        let p = generate_phantom(seed, 0.5, (128, 128)).map_err(|e| e.to_string())?;
        let (_, out) = label_map(&p.truth, &LabelingConfig::default()).map_err(|e| e.to_string())?;
        let r = report_from_ledger(&format!("phantom-{seed}"), &out.ledger, &bg, &hyp, &template).map_err(|e| e.to_string())?;
        for (ext, body) in [("txt", r.to_text()), ("json", r.to_json())] {
            let path = golden.join(format!("report_seed{seed}.{ext}"));
            let want = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            ensure!(body == want, "{} differs", path.display());
        }
    }
    let (mut structures, mut causes, mut sentences) = (Counts::default(), Counts::default(), 0);
    for seed in 0..200 {
        let p = generate_phantom(seed, 0.5, (128, 128)).map_err(|e| e.to_string())?;
        let truth = truth_ledger(&p);
        let r = report_from_ledger(&format!("phantom-{seed}"), &truth, &bg, &hyp, &template).map_err(|e| e.to_string())?;
        let bad = unsupported_attributions(&r, &bg, &hyp).map_err(|e| e.to_string())?;
        ensure!(bad.is_empty(), "seed {seed}: unsupported {bad:?}");
        sentences += r.sentences.len();
        let k = evaluate_report_keywords(&r, &truth);
        structures += k.structures;
        causes += k.causes;
    }
    let detail = format!(
        "5 golden pairs byte-equal; {sentences} sentences back-checked; keywords P/R {:.3}/{:.3}, causes P/R {:.3}/{:.3}",
        structures.precision(),
        structures.recall(),
        causes.precision(),
        causes.recall()
    );
    ensure!(
        [structures.precision(), structures.recall(), causes.precision(), causes.recall()].iter().all(|&v| v == 1.0),
        "{detail}"
    );
    Ok(detail)
}

fn c10_determinism() -> Outcome {
    let cfg = PipelineConfig::parse("corpus_size=24\nheight=64\nwidth=64\nepochs=3\nmin_area=5\n").map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_pipeline(&cfg, &a)?;
    run_pipeline(&cfg, &b)?;
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    ensure!(sa.keys().eq(sb.keys()), "runs wrote different file sets");
    let differing: Vec<_> = sa.iter().filter(|(k, v)| sb[*k] != **v).map(|(k, _)| k.display().to_string()).collect();
    ensure!(differing.is_empty(), "differing files: {differing:?}");
    for required in ["model/models.ckpt", "metrics.csv", "metrics.json"] {
        ensure!(sa.contains_key(Path::new(required)), "missing {required}");
    }
    let ledgers = sa.keys().filter(|k| k.starts_with("ledgers")).count();
    let reports = sa.keys().filter(|k| k.starts_with("reports")).count();
    ensure!(ledgers > 0 && reports == 2 * ledgers, "{ledgers} ledgers, {reports} report files");
    Ok(format!("{} files byte-identical across two runs ({ledgers} ledgers, {reports} report files)", sa.len()))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "gradient oracle suite", c1_gradients),
        (2, "dilated convolution equivalence", c2_dilation),
        (3, "graph normalization", c3_normalization),
        (4, "attention normalization", c4_attention),
        (5, "desk-scale segmentation", c5_segmentation),
        (6, "logic engine", c6_logic),
        (7, "meta-interpretive learning", c7_induction),
        (8, "structure labeling", c8_labeling),
        (9, "report pipeline", c9_reports),
        (10, "determinism", c10_determinism),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name} [{secs:.1}s]: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
