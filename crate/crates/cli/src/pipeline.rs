//! Pipeline stages. Each reads its inputs from and writes its outputs to the
//! run directory, so stages compose through files only.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use spinereport_core::init::derive_seed;
use spinereport_core::labeling::{label_map, margin_from_corpus, truth_ledger, LabelingConfig, StructureLedger};
use spinereport_core::metrics::{CrossvalSummary, MetricsAccumulator, MetricsRecord};
use spinereport_core::nets::{Discriminator, Generator};
use spinereport_core::phantom::{
    extract_relation_facts, generate_phantom, read_manifest, split_dataset, write_manifest, ManifestEntry,
    RelationFactSet, SplitTag,
};
use spinereport_core::report::{
    causal_background, hypothesis_text, induce_hypothesis, parse_hypothesis, report_from_ledger, Report, Template,
};
use spinereport_core::segmap::{dequantize, read_pgm, write_pgm, LabeledImage, SegmentationMap};
use spinereport_core::symbolic::SymbolicGraph;
use spinereport_core::train::{load_models, save_models, train, write_history};
use spinereport_logic::Clause;

use crate::config::PipelineConfig;

/// Training precision of the CLI pipeline.
type S = f32;

/// Writes through a sibling temp file and a rename, so readers never see a
/// partial artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("create {}", dir.display()))?;
    }
    let name = path.file_name().ok_or_else(|| anyhow!("{} has no file name", path.display()))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).with_context(|| format!("create {}", tmp.display()))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).with_context(|| format!("write {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("rename to {}", path.display()))
}

/// Artifact locations inside one run directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("corpus/manifest.txt")
    }
    pub fn image(&self, stem: &str) -> PathBuf {
        self.root.join(format!("corpus/{stem}.pgm"))
    }
    pub fn truth(&self, stem: &str) -> PathBuf {
        self.root.join(format!("corpus/{stem}.truth.pgm"))
    }
    pub fn facts(&self, stem: &str) -> PathBuf {
        self.root.join(format!("corpus/{stem}.facts.pl"))
    }
    pub fn truth_ledger(&self, stem: &str) -> PathBuf {
        self.root.join(format!("corpus/{stem}.ledger.json"))
    }
    pub fn graph(&self) -> PathBuf {
        self.root.join("graph/symbolic.txt")
    }
    pub fn models(&self) -> PathBuf {
        self.root.join("model/models.ckpt")
    }
    pub fn history(&self) -> PathBuf {
        self.root.join("model/history.csv")
    }
    pub fn prediction(&self, stem: &str) -> PathBuf {
        self.root.join(format!("pred/{stem}.pgm"))
    }
    pub fn ledger(&self, stem: &str) -> PathBuf {
        self.root.join(format!("ledgers/{stem}.json"))
    }
    pub fn hypothesis(&self) -> PathBuf {
        self.root.join("hypothesis.pl")
    }
    pub fn report_text(&self, stem: &str) -> PathBuf {
        self.root.join(format!("reports/{stem}.txt"))
    }
    pub fn report_json(&self, stem: &str) -> PathBuf {
        self.root.join(format!("reports/{stem}.json"))
    }
    pub fn metrics(&self, ext: &str) -> PathBuf {
        self.root.join(format!("metrics.{ext}"))
    }
    pub fn crossval(&self, ext: &str) -> PathBuf {
        self.root.join(format!("crossval.{ext}"))
    }
}

/// Reads an upstream artifact, naming the stage that produces it when absent.
fn read_artifact(path: &Path, producer: &str) -> Result<Vec<u8>> {
    if !path.exists() {
        bail!("missing artifact {} (run `{producer}` first)", path.display());
    }
    fs::read(path).with_context(|| format!("read {}", path.display()))
}

fn read_string(path: &Path, producer: &str) -> Result<String> {
    String::from_utf8(read_artifact(path, producer)?).with_context(|| format!("{} is not UTF-8", path.display()))
}

fn pgm_bytes(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_pgm(&mut buf, width, height, pixels).expect("in-memory write");
    buf
}

fn map_bytes(map: &SegmentationMap) -> Vec<u8> {
    pgm_bytes(map.width(), map.height(), map.classes())
}

fn read_map(path: &Path, producer: &str) -> Result<SegmentationMap> {
    Ok(SegmentationMap::read_pgm(&read_artifact(path, producer)?[..]).with_context(|| format!("{}", path.display()))?)
}

fn read_item(layout: &Layout, stem: &str) -> Result<LabeledImage> {
    let bytes = read_artifact(&layout.image(stem), "generate")?;
    let (_, _, pixels) = read_pgm(&bytes[..]).with_context(|| format!("{}", layout.image(stem).display()))?;
    let truth = read_map(&layout.truth(stem), "generate")?;
    Ok(LabeledImage::new(dequantize(&pixels), truth)?)
}

fn read_ledger(path: &Path, producer: &str) -> Result<StructureLedger> {
    Ok(StructureLedger::from_json(&read_string(path, producer)?)?)
}

pub fn phantom_seed(cfg: &PipelineConfig, index: usize) -> u64 {
    derive_seed(cfg.seed, "phantom").wrapping_add(index as u64)
}

pub fn stem(index: usize) -> String {
    format!("p{index:04}")
}

/// Phantoms, truth maps, relation facts and truth ledgers, plus a manifest
/// with the train/test split.
pub fn cmd_generate(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let split = split_dataset(cfg.corpus_size, cfg.train_fraction, cfg.folds, derive_seed(cfg.seed, "split"))?;
    let mut entries: Vec<ManifestEntry> = (0..cfg.corpus_size)
        .map(|i| ManifestEntry {
            path: stem(i),
            seed: phantom_seed(cfg, i),
            split: if split.test.contains(&i) { SplitTag::Test } else { SplitTag::Train },
        })
        .collect();
    entries.par_iter().try_for_each(|e| -> Result<()> {
        let p = generate_phantom(e.seed, cfg.abnormality_rate, (cfg.height, cfg.width))?;
        write_atomic(&layout.image(&e.path), &pgm_bytes(p.width(), p.height(), &p.image_bytes()))?;
        write_atomic(&layout.truth(&e.path), &map_bytes(&p.truth))?;
        let mut facts = Vec::new();
        extract_relation_facts(&p).write_text(&mut facts)?;
        write_atomic(&layout.facts(&e.path), &facts)?;
        write_atomic(&layout.truth_ledger(&e.path), truth_ledger(&p).to_json().as_bytes())
    })?;
    // Train items keep their fold order: fold k is every folds-th train item.
    entries.sort_by_key(|e| e.path.clone());
    let mut manifest = Vec::new();
    write_manifest(&mut manifest, &entries)?;
    write_atomic(&layout.manifest(), &manifest)?;
    log::info!("generate: {} phantoms ({} test)", entries.len(), split.test.len());
    Ok(())
}

fn manifest(layout: &Layout) -> Result<Vec<ManifestEntry>> {
    Ok(read_manifest(BufReader::new(&read_artifact(&layout.manifest(), "generate")?[..]))?)
}

fn stems(entries: &[ManifestEntry], split: SplitTag) -> Vec<String> {
    entries.iter().filter(|e| e.split == split).map(|e| e.path.clone()).collect()
}

fn load_items(layout: &Layout, stems: &[String]) -> Result<Vec<LabeledImage>> {
    stems.par_iter().map(|s| read_item(layout, s)).collect()
}

/// Deals the training stems round-robin into folds, in manifest order.
pub fn folds(train: &[String], k: usize) -> Vec<Vec<String>> {
    let mut out = vec![Vec::new(); k];
    for (i, s) in train.iter().enumerate() {
        out[i % k].push(s.clone());
    }
    out
}

pub fn cmd_buildgraph(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let train = load_items(layout, &stems(&manifest(layout)?, SplitTag::Train))?;
    let graph = SymbolicGraph::build(&train, &cfg.hog)?;
    let mut buf = Vec::new();
    graph.write_text(&mut buf)?;
    write_atomic(&layout.graph(), &buf)
}

fn read_graph(layout: &Layout) -> Result<SymbolicGraph> {
    Ok(SymbolicGraph::read_text(BufReader::new(&read_artifact(&layout.graph(), "buildgraph")?[..]))?)
}

fn networks(cfg: &PipelineConfig, graph: Option<&SymbolicGraph>) -> Result<(Generator<S>, Discriminator<S>)> {
    let seed = derive_seed(cfg.seed, "model");
    Ok((Generator::new(cfg.generator.clone(), graph, seed)?, Discriminator::new(cfg.discriminator.clone(), seed)?))
}

fn train_networks(
    cfg: &PipelineConfig,
    graph: Option<&SymbolicGraph>,
    train_set: &[LabeledImage],
    monitor: &[LabeledImage],
) -> Result<(Generator<S>, Discriminator<S>, Vec<u8>)> {
    let (mut gen, mut disc) = networks(cfg, graph)?;
    let history = train(&mut gen, &mut disc, train_set, monitor, &cfg.train_config())?;
    for r in &history {
        log::info!("epoch {} l_mcl {:.6} l_d {:?} pixel_acc {:?}", r.epoch, r.l_mcl, r.l_d, r.pixel_acc);
    }
    let mut csv = Vec::new();
    write_history(&mut csv, &history)?;
    Ok((gen, disc, csv))
}

/// Trains on the train split. The per-epoch accuracy in the history is
/// measured on the test split and is never used to pick a model.
pub fn cmd_train(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let entries = manifest(layout)?;
    let graph = if cfg.generator.use_sgr { Some(read_graph(layout)?) } else { None };
    let train_set = load_items(layout, &stems(&entries, SplitTag::Train))?;
    let monitor = load_items(layout, &stems(&entries, SplitTag::Test))?;
    let (gen, disc, csv) = train_networks(cfg, graph.as_ref(), &train_set, &monitor)?;
    write_atomic(&layout.models(), &save_models(&gen, &disc)?)?;
    write_atomic(&layout.history(), &csv)
}

fn load_generator(cfg: &PipelineConfig, layout: &Layout) -> Result<Generator<S>> {
    let graph = if cfg.generator.use_sgr { Some(read_graph(layout)?) } else { None };
    let (mut gen, mut disc) = networks(cfg, graph.as_ref())?;
    load_models(&read_artifact(&layout.models(), "train")?, &mut gen, &mut disc)?;
    Ok(gen)
}

fn predict_all(gen: &Generator<S>, items: &[LabeledImage]) -> Result<Vec<SegmentationMap>> {
    items.par_iter().map(|it| Ok(gen.predict(&it.image, it.height(), it.width())?.1)).collect()
}

/// Segments every test image.
pub fn cmd_segment(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let gen = load_generator(cfg, layout)?;
    let test = stems(&manifest(layout)?, SplitTag::Test);
    let items = load_items(layout, &test)?;
    let preds = predict_all(&gen, &items)?;
    test.par_iter().zip(&preds).try_for_each(|(s, p)| write_atomic(&layout.prediction(s), &map_bytes(p)))
}

fn labeling_config(cfg: &PipelineConfig, train_truth: &[SegmentationMap]) -> Result<LabelingConfig> {
    Ok(LabelingConfig { min_area: cfg.min_area, margin: margin_from_corpus(train_truth)? })
}

/// Labels a predicted map. A map without any vertebra yields an empty
/// ledger and a warning instead of failing the corpus.
fn label_one(map: &SegmentationMap, lcfg: &LabelingConfig, name: &str) -> Result<StructureLedger> {
    match label_map(map, lcfg) {
        Ok((_, out)) => {
            for d in &out.diagnostics {
                log::warn!("{name}: {d}");
            }
            Ok(out.ledger)
        }
        Err(e) if e.to_string().contains("no vertebra found") => {
            log::warn!("{name}: {e}; writing an empty ledger");
            Ok(StructureLedger::default())
        }
        Err(e) => Err(e.into()),
    }
}

fn train_truth(layout: &Layout, entries: &[ManifestEntry]) -> Result<Vec<SegmentationMap>> {
    stems(entries, SplitTag::Train).par_iter().map(|s| read_map(&layout.truth(s), "generate")).collect()
}

/// Ledgers for every segmented test image; the disc margin comes from the
/// training truth maps.
pub fn cmd_label(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let entries = manifest(layout)?;
    let lcfg = labeling_config(cfg, &train_truth(layout, &entries)?)?;
    stems(&entries, SplitTag::Test).par_iter().try_for_each(|s| {
        let map = read_map(&layout.prediction(s), "segment")?;
        let ledger = label_one(&map, &lcfg, s)?;
        write_atomic(&layout.ledger(s), ledger.to_json().as_bytes())
    })
}

fn train_facts(layout: &Layout, stems: &[String]) -> Result<Vec<RelationFactSet>> {
    stems
        .par_iter()
        .map(|s| Ok(RelationFactSet::read_text(BufReader::new(&read_artifact(&layout.facts(s), "generate")?[..]))?))
        .collect()
}

/// Induces cause/3 from the training split's relation facts.
pub fn cmd_induce(_cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let facts = train_facts(layout, &stems(&manifest(layout)?, SplitTag::Train))?;
    let h = induce_hypothesis(&causal_background(), &facts)?;
    write_atomic(&layout.hypothesis(), hypothesis_text(&h.clauses).as_bytes())
}

fn template(cfg: &PipelineConfig) -> Result<Template> {
    if cfg.template_path.is_empty() {
        if cfg.template_version != "v1" {
            bail!("no built-in template {:?}; set template_path", cfg.template_version);
        }
        return Ok(Template::v1());
    }
    let text = fs::read_to_string(&cfg.template_path).with_context(|| format!("read template {}", cfg.template_path))?;
    Ok(Template::parse(&cfg.template_version, &text)?)
}

fn read_hypothesis(layout: &Layout) -> Result<Vec<Clause>> {
    Ok(parse_hypothesis(&read_string(&layout.hypothesis(), "induce")?)?)
}

/// Text and JSON report for every labeled test image.
pub fn cmd_report(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let hypothesis = read_hypothesis(layout)?;
    let template = template(cfg)?;
    let background = causal_background();
    stems(&manifest(layout)?, SplitTag::Test).par_iter().try_for_each(|s| {
        let ledger = read_ledger(&layout.ledger(s), "label")?;
        let r = report_from_ledger(s, &ledger, &background, &hypothesis, &template)?;
        write_atomic(&layout.report_text(s), r.to_text().as_bytes())?;
        write_atomic(&layout.report_json(s), r.to_json().as_bytes())
    })
}

fn write_metrics(layout: &Layout, m: &MetricsRecord) -> Result<()> {
    write_atomic(&layout.metrics("csv"), m.to_csv().as_bytes())?;
    write_atomic(&layout.metrics("json"), m.to_json().as_bytes())
}

/// Metrics over the test split from predictions, ledgers and reports.
pub fn cmd_eval(_cfg: &PipelineConfig, layout: &Layout) -> Result<MetricsRecord> {
    let test = stems(&manifest(layout)?, SplitTag::Test);
    let per_item: Vec<_> = test
        .par_iter()
        .map(|s| -> Result<_> {
            let pred = read_map(&layout.prediction(s), "segment")?;
            let truth = read_map(&layout.truth(s), "generate")?;
            let ledger = read_ledger(&layout.ledger(s), "label")?;
            let truth_ledger = read_ledger(&layout.truth_ledger(s), "generate")?;
            let report = Report::from_json(&read_string(&layout.report_json(s), "report")?)?;
            Ok((pred, truth, ledger, truth_ledger, report))
        })
        .collect::<Result<_>>()?;
    let mut acc = MetricsAccumulator::default();
    for (pred, truth, ledger, truth_ledger, report) in &per_item {
        acc.add(pred, truth, ledger, truth_ledger, Some(report))?;
    }
    let m = acc.finish()?;
    write_metrics(layout, &m)?;
    Ok(m)
}

/// Per fold: graph, training, segmentation, labeling, induction and reports
/// on the remaining training folds, metrics on the held-out fold.
pub fn cmd_crossval(cfg: &PipelineConfig, layout: &Layout) -> Result<CrossvalSummary> {
    let entries = manifest(layout)?;
    let train = stems(&entries, SplitTag::Train);
    let template = template(cfg)?;
    let background = causal_background();
    let mut records = Vec::with_capacity(cfg.folds);
    for (k, held) in folds(&train, cfg.folds).iter().enumerate() {
        let fit: Vec<String> = train.iter().filter(|s| !held.contains(s)).cloned().collect();
        let fit_items = load_items(layout, &fit)?;
        let held_items = load_items(layout, held)?;
        let graph = if cfg.generator.use_sgr { Some(SymbolicGraph::build(&fit_items, &cfg.hog)?) } else { None };
        let (gen, _, _) = train_networks(cfg, graph.as_ref(), &fit_items, &held_items)?;
        let fit_truth: Vec<SegmentationMap> = fit_items.iter().map(|it| it.truth.clone()).collect();
        let lcfg = labeling_config(cfg, &fit_truth)?;
        let hypothesis = induce_hypothesis(&background, &train_facts(layout, &fit)?)?.clauses;
        let preds = predict_all(&gen, &held_items)?;
        let mut acc = MetricsAccumulator::default();
        for ((s, it), pred) in held.iter().zip(&held_items).zip(&preds) {
            let ledger = label_one(pred, &lcfg, s)?;
            let truth = read_ledger(&layout.truth_ledger(s), "generate")?;
            let report = report_from_ledger(s, &ledger, &background, &hypothesis, &template)?;
            acc.add(pred, &it.truth, &ledger, &truth, Some(&report))?;
        }
        let m = acc.finish()?;
        log::info!("fold {k}: pixel accuracy {:.4}, mean dice {:.4}", m.pixel_accuracy, m.mean_dice);
        records.push(m);
    }
    let cv = CrossvalSummary::new(records)?;
    write_atomic(&layout.crossval("csv"), cv.to_csv().as_bytes())?;
    write_atomic(&layout.crossval("json"), (serde_json::to_string_pretty(&cv)? + "\n").as_bytes())?;
    Ok(cv)
}

/// Every stage in order.
pub fn cmd_run(cfg: &PipelineConfig, layout: &Layout) -> Result<MetricsRecord> {
    cmd_generate(cfg, layout)?;
    cmd_buildgraph(cfg, layout)?;
    cmd_train(cfg, layout)?;
    cmd_segment(cfg, layout)?;
    cmd_label(cfg, layout)?;
    cmd_induce(cfg, layout)?;
    cmd_report(cfg, layout)?;
    cmd_eval(cfg, layout)
}
