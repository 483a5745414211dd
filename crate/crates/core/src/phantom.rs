//! Synthetic sagittal lumbar phantoms with pixel-exact truth.
//!
//! All geometry is laid out on a 128×128 reference grid and scaled to the
//! requested size. From top to bottom the column is an optional T12-L1
//! disc, then L1..L5 with a disc after each of L1..L4, then an optional
//! L5-S1 disc. Discs touch the vertebrae above and below them. Each disc
//! level carries one neural foramen placed posterior (to the right) of the
//! column inside a grey band of posterior elements.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use spinereport_logic::Term;

use crate::error::{CoreError, Result};
use crate::segmap::{self, Kind, LabeledImage, SegmentationMap};

pub const MIN_SIDE: usize = 64;
pub const NOISE_SIGMA: f64 = 0.05;
/// Chance that a foramen with no abnormal neighbour is stenotic anyway.
pub const OTHERS_PROBABILITY: f64 = 0.1;
/// Chance that a foramen next to an abnormal disc or vertebra is stenotic.
pub const NEIGHBOUR_PROBABILITY: f64 = 0.8;

const VERTEBRA_NAMES: [&str; 5] = ["L1", "L2", "L3", "L4", "L5"];

const BACKGROUND_LEVEL: f64 = 0.08;
const POSTERIOR_LEVEL: f64 = 0.32;
const VERTEBRA_LEVEL: f64 = 0.68;
const DISC_LEVEL: f64 = 0.55;
const DEGENERATE_DISC_LEVEL: f64 = 0.36;
const FORAMEN_LEVEL: f64 = 0.86;
const LEVEL_JITTER: f64 = 0.04;

/// Half-open pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl BBox {
    pub(crate) fn empty() -> Self {
        BBox { top: usize::MAX, left: usize::MAX, bottom: 0, right: 0 }
    }

    pub(crate) fn include(&mut self, r: usize, c: usize) {
        self.top = self.top.min(r);
        self.left = self.left.min(c);
        self.bottom = self.bottom.max(r + 1);
        self.right = self.right.max(c + 1);
    }

    pub fn height(&self) -> usize {
        self.bottom - self.top
    }

    pub fn width(&self) -> usize {
        self.right - self.left
    }

    /// Rows strictly between the two intervals; 0 when they touch or overlap.
    pub fn row_gap(&self, other: &BBox) -> usize {
        if self.bottom <= other.top {
            other.top - self.bottom
        } else if other.bottom <= self.top {
            self.top - other.bottom
        } else {
            0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    pub kind: Kind,
    /// Top-down index within `kind`.
    pub order: usize,
    /// Vertebra name (`L3`) or level pair (`L3-L4`).
    pub key: String,
    pub abnormal: bool,
    pub bbox: BBox,
}

impl Structure {
    pub fn class(&self) -> u8 {
        self.kind.class(self.abnormal)
    }

    /// Logic constant naming this instance, e.g. `disc_l4_l5`.
    pub fn instance(&self) -> String {
        instance_name(self.kind, &self.key)
    }

    /// Disease constant used in causal atoms.
    pub fn verdict(&self) -> &'static str {
        disease_constant(self.kind, self.abnormal)
    }
}

pub fn instance_name(kind: Kind, key: &str) -> String {
    let prefix = match kind {
        Kind::Vertebra => "vert",
        Kind::Disc => "disc",
        Kind::Foramen => "foramen",
    };
    format!("{prefix}_{}", key.to_ascii_lowercase().replace('-', "_"))
}

pub fn disease_constant(kind: Kind, abnormal: bool) -> &'static str {
    match (kind, abnormal) {
        (_, false) => "normal",
        (Kind::Vertebra, true) => "lvd",
        (Kind::Disc, true) => "idd",
        (Kind::Foramen, true) => "nfs",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpinePhantom {
    pub seed: u64,
    /// Row-major intensities in `[0,1]`.
    pub image: Vec<f64>,
    pub truth: SegmentationMap,
    /// Vertebrae, then discs, then foramina; each group top-down.
    pub structures: Vec<Structure>,
}

impl SpinePhantom {
    pub fn height(&self) -> usize {
        self.truth.height()
    }

    pub fn width(&self) -> usize {
        self.truth.width()
    }

    pub fn of_kind(&self, kind: Kind) -> impl Iterator<Item = &Structure> {
        self.structures.iter().filter(move |s| s.kind == kind)
    }

    pub fn find(&self, kind: Kind, key: &str) -> Option<&Structure> {
        self.structures.iter().find(|s| s.kind == kind && s.key == key)
    }

    pub fn image_bytes(&self) -> Vec<u8> {
        segmap::quantize(&self.image)
    }

    /// Image as it reads back from its 8-bit PGM, paired with the truth.
    pub fn labeled(&self) -> LabeledImage {
        LabeledImage { image: segmap::dequantize(&self.image_bytes()), truth: self.truth.clone() }
    }
}

fn level_key(upper: &str, lower: &str) -> String {
    format!("{upper}-{lower}")
}

/// Vertical interval of a column structure on the reference layout.
struct Slot {
    kind: Kind,
    key: String,
    top: usize,
    height: usize,
    abnormal: bool,
}

fn jitter(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-LEVEL_JITTER..=LEVEL_JITTER)
}

fn scaled(v: f64, s: f64) -> usize {
    (v * s).round().max(1.0) as usize
}

pub fn generate_phantom(seed: u64, abnormality_rate: f64, size: (usize, usize)) -> Result<SpinePhantom> {
    let (h, w) = size;
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(CoreError::invalid(format!(
            "phantom size {h}x{w} cannot hold five vertebrae; both sides must be at least {MIN_SIDE}"
        )));
    }
    if !(0.0..=1.0).contains(&abnormality_rate) {
        return Err(CoreError::invalid(format!("abnormality rate {abnormality_rate} outside [0,1]")));
    }
    let (sh, sw) = (h as f64 / 128.0, w as f64 / 128.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_discs: usize = rng.gen_range(4..=6);
    let vert_abnormal: Vec<bool> = (0..5).map(|_| rng.gen_bool(abnormality_rate)).collect();
    let mut disc_keys: Vec<String> = (0..4).map(|i| level_key(VERTEBRA_NAMES[i], VERTEBRA_NAMES[i + 1])).collect();
    let (has_top, has_bottom) = (n_discs == 6, n_discs >= 5);
    if has_top {
        disc_keys.insert(0, "T12-L1".to_string());
    }
    if has_bottom {
        disc_keys.push("L5-S1".to_string());
    }
    let disc_abnormal: Vec<bool> = disc_keys.iter().map(|_| rng.gen_bool(abnormality_rate)).collect();

    // Column slots top-down.
    let mut slots = Vec::with_capacity(11);
    let mut discs = disc_keys.iter().zip(&disc_abnormal);
    let push_disc = |slots: &mut Vec<Slot>, rng: &mut ChaCha8Rng, (key, &abnormal): (&String, &bool)| {
        let base = scaled(6.0 + f64::from(rng.gen_range(0u8..=1)), sh);
        let height = if abnormal { base.saturating_sub(scaled(2.0, sh)).max(2) } else { base };
        slots.push(Slot { kind: Kind::Disc, key: key.clone(), top: 0, height, abnormal });
    };
    if has_top {
        push_disc(&mut slots, &mut rng, discs.next().expect("top disc"));
    }
    for (i, name) in VERTEBRA_NAMES.iter().enumerate() {
        let height = scaled(13.0 + f64::from(rng.gen_range(-1i8..=1)), sh);
        slots.push(Slot { kind: Kind::Vertebra, key: name.to_string(), top: 0, height, abnormal: vert_abnormal[i] });
        if i < 4 || has_bottom {
            push_disc(&mut slots, &mut rng, discs.next().expect("disc after vertebra"));
        }
    }
    let total: usize = slots.iter().map(|s| s.height).sum();
    let margin = scaled(6.0, sh);
    if total + 2 * margin > h {
        return Err(CoreError::invalid(format!("phantom height {h} too small for a column of {total} rows")));
    }
    let mut y = rng.gen_range(margin..=h - total - margin);
    for s in &mut slots {
        s.top = y;
        y += s.height;
    }

    let col_width = scaled(36.0 + f64::from(rng.gen_range(-2i8..=2)), sw);
    let col_left = ((0.28 * 128.0 + f64::from(rng.gen_range(-4i8..=4))) * sw).round() as usize;
    let col_right = col_left + col_width;
    let band = (col_right + scaled(3.0, sw), (col_right + scaled(22.0, sw)).min(w));
    let foramen_x = (col_right + scaled(12.0, sw)) as f64;

    // Foramina follow their disc level; stenosis is mostly caused by a neighbour.
    let vert_of = |name: &str| VERTEBRA_NAMES.iter().position(|v| *v == name);
    let mut foramen_abnormal = Vec::with_capacity(disc_keys.len());
    for (key, &disc_bad) in disc_keys.iter().zip(&disc_abnormal) {
        let flank_bad = key.split('-').filter_map(vert_of).any(|i| vert_abnormal[i]);
        let p = if disc_bad || flank_bad {
            NEIGHBOUR_PROBABILITY
        } else if abnormality_rate > 0.0 {
            OTHERS_PROBABILITY
        } else {
            0.0
        };
        foramen_abnormal.push(rng.gen_bool(p));
    }

    let mut image = vec![BACKGROUND_LEVEL; h * w];
    let mut truth = SegmentationMap::background(h, w);
    let mut boxes: Vec<BBox> = Vec::new();

    let (first, last) = (slots[0].top, slots.last().map(|s| s.top + s.height).unwrap_or(h));
    let band_level = POSTERIOR_LEVEL + jitter(&mut rng);
    for r in first.saturating_sub(margin / 2)..(last + margin / 2).min(h) {
        for c in band.0..band.1 {
            image[r * w + c] = band_level;
        }
    }

    let mut structures = Vec::new();
    let (mut n_vert, mut n_disc) = (0, 0);
    for s in &slots {
        let mut bbox = BBox::empty();
        let half = s.height as f64 / 2.0;
        let centre = s.top as f64 + half;
        let class = s.kind.class(s.abnormal);
        match s.kind {
            Kind::Vertebra => {
                let level = VERTEBRA_LEVEL + jitter(&mut rng);
                let shear = if s.abnormal {
                    let mag = rng.gen_range(4.0..=6.0) * sw;
                    if rng.gen_bool(0.5) { mag } else { -mag }
                } else {
                    0.0
                };
                for r in s.top..s.top + s.height {
                    let t = (r as f64 + 0.5 - centre) / s.height as f64;
                    let off = (shear * t).round() as isize;
                    let lo = col_left as isize + off;
                    for c in lo.max(0)..(lo + col_width as isize).min(w as isize) {
                        let c = c as usize;
                        image[r * w + c] = level;
                        truth.set(r, c, class);
                        bbox.include(r, c);
                    }
                }
                structures.push(Structure { kind: Kind::Vertebra, order: n_vert, key: s.key.clone(), abnormal: s.abnormal, bbox });
                n_vert += 1;
            }
            Kind::Disc => {
                let level = if s.abnormal { DEGENERATE_DISC_LEVEL } else { DISC_LEVEL } + jitter(&mut rng);
                let bulge = if s.abnormal { rng.gen_range(3.0..=4.0) * sw } else { 0.0 };
                for r in s.top..s.top + s.height {
                    let t = (r as f64 + 0.5 - centre) / half;
                    let round = 1.5 * sw * t * t;
                    let lo = (col_left as f64 + round).round() as usize;
                    let hi = ((col_right as f64 - round + bulge * (1.0 - t * t)).round() as usize).min(w);
                    for c in lo..hi {
                        image[r * w + c] = level;
                        truth.set(r, c, class);
                        bbox.include(r, c);
                    }
                }
                structures.push(Structure { kind: Kind::Disc, order: n_disc, key: s.key.clone(), abnormal: s.abnormal, bbox });
                n_disc += 1;
            }
            Kind::Foramen => unreachable!("foramina are not column slots"),
        }
        boxes.push(bbox);
    }

    for (order, (slot, &abnormal)) in slots.iter().filter(|s| s.kind == Kind::Disc).zip(&foramen_abnormal).enumerate() {
        let (a, b) = if abnormal { (2.5 * sw, 4.5 * sh) } else { (4.5 * sw, 7.0 * sh) };
        let cy = slot.top as f64 + slot.height as f64 / 2.0;
        let level = FORAMEN_LEVEL + jitter(&mut rng);
        let class = Kind::Foramen.class(abnormal);
        let mut bbox = BBox::empty();
        let rows = (cy - b).floor().max(0.0) as usize..((cy + b).ceil() as usize).min(h);
        let cols = (foramen_x - a).floor().max(0.0) as usize..((foramen_x + a).ceil() as usize).min(w);
        for r in rows {
            for c in cols.clone() {
                let (dy, dx) = ((r as f64 + 0.5 - cy) / b, (c as f64 + 0.5 - foramen_x) / a);
                if dx * dx + dy * dy <= 1.0 {
                    image[r * w + c] = level;
                    truth.set(r, c, class);
                    bbox.include(r, c);
                }
            }
        }
        structures.push(Structure { kind: Kind::Foramen, order, key: slot.key.clone(), abnormal, bbox });
    }
    structures.sort_by_key(|s| (s.kind, s.order));

    let noise = Normal::new(0.0, NOISE_SIGMA).expect("positive sigma");
    for v in &mut image {
        *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
    }

    Ok(SpinePhantom { seed, image, truth, structures })
}

/// Ground atoms describing one phantom plus the causal examples it yields.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RelationFactSet {
    pub facts: Vec<Term>,
    pub positives: Vec<Term>,
    pub negatives: Vec<Term>,
}

impl RelationFactSet {
    /// `adjacentTo/2` pairs as instance names.
    pub fn adjacent_pairs(&self) -> BTreeSet<(String, String)> {
        self.facts
            .iter()
            .filter(|t| matches!(t.indicator(), Some((ref n, 2)) if n.as_ref() == "adjacentTo"))
            .map(|t| (t.args()[0].to_string(), t.args()[1].to_string()))
            .collect()
    }

    /// One clause per line: facts, then `% positive`/`% negative` sections.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.facts {
            writeln!(w, "{t}.")?;
        }
        writeln!(w, "% positive")?;
        for t in &self.positives {
            writeln!(w, "{t}.")?;
        }
        writeln!(w, "% negative")?;
        for t in &self.negatives {
            writeln!(w, "{t}.")?;
        }
        Ok(())
    }

    /// Inverse of [`RelationFactSet::write_text`].
    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut out = RelationFactSet { facts: Vec::new(), positives: Vec::new(), negatives: Vec::new() };
        let mut section = 0;
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| CoreError::invalid(format!("facts line {}: {e}", n + 1)))?;
            let line = line.trim();
            match line {
                "" => continue,
                "% positive" => section = 1,
                "% negative" => section = 2,
                _ if line.starts_with('%') => continue,
                _ => {
                    let body = line.strip_suffix('.').unwrap_or(line);
                    let t = spinereport_logic::parse_term(body)
                        .map_err(|e| CoreError::invalid(format!("facts line {}: {e}", n + 1)))?;
                    [&mut out.facts, &mut out.positives, &mut out.negatives][section].push(t);
                }
            }
        }
        Ok(out)
    }
}

/// Whether two structures are vertical neighbours: column structures whose
/// row intervals touch, or a foramen whose rows touch a column structure.
fn neighbours(a: &Structure, b: &Structure) -> bool {
    a.kind != b.kind && a.bbox.row_gap(&b.bbox) == 0
}

pub fn extract_relation_facts(phantom: &SpinePhantom) -> RelationFactSet {
    let s = &phantom.structures;
    let mut facts = BTreeSet::new();
    for x in s {
        facts.insert(Term::atom("kindOf", &[&x.instance(), x.kind.name()]));
        if x.abnormal {
            facts.insert(Term::atom("abnormal", &[&x.instance()]));
        }
    }
    let mut adjacent = vec![Vec::new(); s.len()];
    for i in 0..s.len() {
        for j in 0..s.len() {
            if i != j && neighbours(&s[i], &s[j]) {
                adjacent[i].push(j);
                facts.insert(Term::atom("adjacentTo", &[&s[i].instance(), &s[j].instance()]));
                if s[i].abnormal && s[j].abnormal {
                    facts.insert(Term::atom("cooccurs", &[s[i].verdict(), s[j].verdict()]));
                }
            }
        }
    }

    let mut positives = BTreeSet::new();
    let mut negatives = BTreeSet::new();
    for (i, f) in s.iter().enumerate().filter(|(_, x)| x.kind == Kind::Foramen) {
        let disc = adjacent[i].iter().map(|&j| &s[j]).find(|x| x.kind == Kind::Disc && x.key == f.key);
        let disc_verdict = disc.map_or("normal", |d| d.verdict());
        let verts: Vec<&Structure> = adjacent[i].iter().map(|&j| &s[j]).filter(|x| x.kind == Kind::Vertebra).collect();
        let any_bad = disc.is_some_and(|d| d.abnormal) || verts.iter().any(|v| v.abnormal);
        if f.abnormal {
            if any_bad {
                for v in &verts {
                    if v.abnormal || disc_verdict != "normal" {
                        positives.insert(Term::atom("cause", &[disc_verdict, v.verdict(), "nfs"]));
                    }
                }
            } else {
                positives.insert(Term::atom("cause", &["others", "others", "nfs"]));
            }
        } else if !any_bad {
            negatives.insert(Term::atom("cause", &["normal", "normal", "nfs"]));
        }
    }
    RelationFactSet {
        facts: facts.into_iter().collect(),
        positives: positives.into_iter().collect(),
        negatives: negatives.into_iter().collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Disjoint subsets of `train`, sizes within one of each other.
    pub folds: Vec<Vec<usize>>,
}

/// Shuffled split of `0..n` into train/test, with the train part dealt
/// round-robin into `folds` cross-validation folds.
pub fn split_dataset(n: usize, train_fraction: f64, folds: usize, seed: u64) -> Result<Partition> {
    if n == 0 {
        return Err(CoreError::invalid("cannot split an empty corpus"));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(CoreError::invalid(format!("train fraction {train_fraction} outside [0,1]")));
    }
    if folds == 0 || folds > n {
        return Err(CoreError::invalid(format!("{folds} folds requested for a corpus of {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train < folds {
        return Err(CoreError::invalid(format!("{folds} folds requested for {n_train} training items")));
    }
    let test = idx.split_off(n_train);
    if test.is_empty() {
        log::warn!("train fraction {train_fraction} leaves an empty test set");
    }
    let mut fold_sets = vec![Vec::new(); folds];
    for (k, &i) in idx.iter().enumerate() {
        fold_sets[k % folds].push(i);
    }
    Ok(Partition { train: idx, test, folds: fold_sets })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
        })
    }
}

/// One corpus item: image stem relative to the corpus directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub seed: u64,
    pub split: SplitTag,
}

pub fn write_manifest<W: Write>(mut w: W, entries: &[ManifestEntry]) -> std::io::Result<()> {
    for e in entries {
        writeln!(w, "{} {} {}", e.path, e.seed, e.split)?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(r: R) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| CoreError::invalid(format!("manifest line {}: {e}", n + 1)))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || CoreError::invalid(format!("manifest line {}: expected `path seed train|test`, got {line:?}", n + 1));
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [path, seed, split] = parts[..] else { return Err(bad()) };
        let seed = seed.parse().map_err(|_| bad())?;
        let split = match split {
            "train" => SplitTag::Train,
            "test" => SplitTag::Test,
            _ => return Err(bad()),
        };
        out.push(ManifestEntry { path: path.to_string(), seed, split });
    }
    Ok(out)
}
