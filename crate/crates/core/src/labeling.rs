//! Structure labeling: components, spot removal, top-down ordering checked
//! by the spatial logic program, and per-component normality votes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use spinereport_logic::{parse_program, parse_query, solve, Limits, LogicError, Program};

use crate::components::regions;
use crate::error::{CoreError, Result};
use crate::phantom::{BBox, SpinePhantom};
use crate::segmap::{Kind, SegmentationMap, BACKGROUND};

pub const DEFAULT_MIN_AREA: usize = 20;
pub const VERTEBRA_NAMES: [&str; 5] = ["L1", "L2", "L3", "L4", "L5"];
/// Level names just outside the lumbar range.
pub const ABOVE_L1: &str = "T12";
pub const BELOW_L5: &str = "S1";

pub const SPATIAL_RULES: &str = "\
sep(A,B,C):-same(A,C),adj(A,B),adj(B,C).
adj(A,B):-touch(A,B).
adj(A,B):-touch(B,A).
";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    /// Index in the owning set.
    pub id: usize,
    pub kind: Kind,
    /// Row-major `(row, col)` pixels, sorted.
    pub pixels: Vec<(usize, usize)>,
    pub bbox: BBox,
    pub centroid: (f64, f64),
    pub normal_pixels: usize,
    pub abnormal_pixels: usize,
}

impl Component {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentSet {
    pub height: usize,
    pub width: usize,
    /// Ordered by `(bbox.top, bbox.left)`.
    pub components: Vec<Component>,
}

impl ComponentSet {
    pub fn of_kind(&self, kind: Kind) -> impl Iterator<Item = &Component> {
        self.components.iter().filter(move |c| c.kind == kind)
    }
}

fn kind_key(class: u8) -> Option<u8> {
    Kind::of_class(class).map(|(k, _)| k as u8)
}

/// 4-connected components with normal and abnormal variants of one kind merged.
pub fn connected_components(map: &SegmentationMap) -> ComponentSet {
    let mut comps: Vec<Component> = regions(map, kind_key)
        .into_iter()
        .map(|r| {
            let kind = Kind::ALL[r.key as usize];
            let centroid = r.centroid();
            Component {
                id: 0,
                kind,
                normal_pixels: r.class_counts[kind.class(false) as usize],
                abnormal_pixels: r.class_counts[kind.class(true) as usize],
                bbox: r.bbox,
                centroid,
                pixels: r.pixels,
            }
        })
        .collect();
    comps.sort_by_key(|c| (c.bbox.top, c.bbox.left, c.pixels[0]));
    comps.iter_mut().enumerate().for_each(|(i, c)| c.id = i);
    ComponentSet { height: map.height(), width: map.width(), components: comps }
}

/// Drops components smaller than `min_area` and paints their pixels
/// background. Surviving components are renumbered in order.
pub fn remove_spots(map: &SegmentationMap, set: &ComponentSet, min_area: usize) -> Result<(SegmentationMap, ComponentSet)> {
    if min_area == 0 {
        return Err(CoreError::invalid("min_area must be at least 1"));
    }
    if (set.height, set.width) != (map.height(), map.width()) {
        return Err(CoreError::invalid("component set and map sizes differ"));
    }
    let mut cleaned = map.clone();
    let mut kept = Vec::with_capacity(set.components.len());
    for c in &set.components {
        if c.len() < min_area {
            c.pixels.iter().for_each(|&(r, col)| cleaned.set(r, col, BACKGROUND));
        } else {
            kept.push(c.clone());
        }
    }
    kept.iter_mut().enumerate().for_each(|(i, c)| c.id = i);
    Ok((cleaned, ComponentSet { height: set.height, width: set.width, components: kept }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Normal,
    Abnormal,
}

impl Verdict {
    pub fn is_abnormal(self) -> bool {
        self == Verdict::Abnormal
    }

    pub fn name(self) -> &'static str {
        match self {
            Verdict::Normal => "normal",
            Verdict::Abnormal => "abnormal",
        }
    }
}

/// Strict pixel majority; a tie is abnormal.
pub fn vote_normality(component: &Component) -> Result<Verdict> {
    if component.normal_pixels + component.abnormal_pixels == 0 {
        return Err(CoreError::invalid(format!("component {} has no pixels to vote with", component.id)));
    }
    Ok(if component.normal_pixels > component.abnormal_pixels { Verdict::Normal } else { Verdict::Abnormal })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub key: String,
    pub verdict: Verdict,
    pub component_id: usize,
    pub centroid: (f64, f64),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StructureLedger {
    pub vertebrae: Vec<LedgerEntry>,
    pub discs: Vec<LedgerEntry>,
    pub foramina: Vec<LedgerEntry>,
}

impl StructureLedger {
    pub fn table(&self, kind: Kind) -> &[LedgerEntry] {
        match kind {
            Kind::Vertebra => &self.vertebrae,
            Kind::Disc => &self.discs,
            Kind::Foramen => &self.foramina,
        }
    }

    pub fn get(&self, kind: Kind, key: &str) -> Option<&LedgerEntry> {
        self.table(kind).iter().find(|e| e.key == key)
    }

    /// `(kind, key, verdict)` triples; the comparable content of a ledger.
    pub fn verdicts(&self) -> Vec<(Kind, String, Verdict)> {
        Kind::ALL
            .iter()
            .flat_map(|&k| self.table(k).iter().map(move |e| (k, e.key.clone(), e.verdict)))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ledger serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CoreError::invalid(format!("ledger JSON: {e}")))
    }
}

/// The ledger a perfect labeler would produce; component ids index
/// `phantom.structures`, centroids are bounding-box centres.
pub fn truth_ledger(phantom: &SpinePhantom) -> StructureLedger {
    let mut ledger = StructureLedger::default();
    for (id, s) in phantom.structures.iter().enumerate() {
        let b = &s.bbox;
        let entry = LedgerEntry {
            key: s.key.clone(),
            verdict: if s.abnormal { Verdict::Abnormal } else { Verdict::Normal },
            component_id: id,
            centroid: ((b.top + b.bottom) as f64 / 2.0, (b.left + b.right) as f64 / 2.0),
        };
        match s.kind {
            Kind::Vertebra => ledger.vertebrae.push(entry),
            Kind::Disc => ledger.discs.push(entry),
            Kind::Foramen => ledger.foramina.push(entry),
        }
    }
    ledger
}

/// The `(kind, key, verdict)` triples of a phantom's construction.
pub fn expected_ledger(phantom: &SpinePhantom) -> Vec<(Kind, String, Verdict)> {
    Kind::ALL
        .iter()
        .flat_map(|&k| {
            phantom.of_kind(k).map(move |s| {
                (k, s.key.clone(), if s.abnormal { Verdict::Abnormal } else { Verdict::Normal })
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelingOutcome {
    pub ledger: StructureLedger,
    /// Set when the vertebra count is not five.
    pub degraded: bool,
    /// Human-readable problems: degraded mode, unassociated structures,
    /// failing `sep/3` instances.
    pub diagnostics: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelingConfig {
    pub min_area: usize,
    /// Vertical tolerance in pixels when matching a structure to the
    /// vertebra above or below it.
    pub margin: f64,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        // 12 px, the smallest vertebra the 128 px generator draws, over 4.
        LabelingConfig { min_area: DEFAULT_MIN_AREA, margin: 3.0 }
    }
}

/// Minimum vertebra height over `maps` divided by 4.
pub fn margin_from_corpus<'a>(maps: impl IntoIterator<Item = &'a SegmentationMap>) -> Result<f64> {
    let min = maps
        .into_iter()
        .flat_map(|m| connected_components(m).of_kind(Kind::Vertebra).map(|c| c.bbox.height()).collect::<Vec<_>>())
        .min()
        .ok_or_else(|| CoreError::invalid("no vertebra found in the margin corpus"))?;
    Ok(min as f64 / 4.0)
}

fn vertebra_name(i: usize) -> String {
    VERTEBRA_NAMES.get(i).map_or_else(|| format!("V{}", i + 1), |s| s.to_string())
}

fn name_above(name: &str) -> String {
    match VERTEBRA_NAMES.iter().position(|&n| n == name) {
        Some(0) => ABOVE_L1.to_string(),
        Some(i) => VERTEBRA_NAMES[i - 1].to_string(),
        None => format!("{name}-above"),
    }
}

fn name_below(name: &str) -> String {
    match VERTEBRA_NAMES.iter().position(|&n| n == name) {
        Some(4) => BELOW_L5.to_string(),
        Some(i) => VERTEBRA_NAMES[i + 1].to_string(),
        None => format!("{name}-below"),
    }
}

/// Vertical gap from `upper`'s bottom edge to `lower`'s top edge, negative
/// when they overlap.
fn gap(upper: &BBox, lower: &BBox) -> f64 {
    lower.top as f64 - upper.bottom as f64
}

struct Ordered<'a> {
    verts: Vec<(&'a Component, String)>,
}

impl<'a> Ordered<'a> {
    /// Vertebrae touching `c` from above and below within `margin`.
    fn flanks(&self, c: &Component, margin: f64) -> (Option<usize>, Option<usize>) {
        let near = |g: f64| g.abs() <= margin;
        let above = self
            .verts
            .iter()
            .enumerate()
            .filter(|(_, (v, _))| v.centroid.0 < c.centroid.0 && near(gap(&v.bbox, &c.bbox)))
            .min_by(|a, b| gap(&a.1 .0.bbox, &c.bbox).abs().total_cmp(&gap(&b.1 .0.bbox, &c.bbox).abs()))
            .map(|(i, _)| i);
        let below = self
            .verts
            .iter()
            .enumerate()
            .filter(|(_, (v, _))| v.centroid.0 > c.centroid.0 && near(gap(&c.bbox, &v.bbox)))
            .min_by(|a, b| gap(&c.bbox, &a.1 .0.bbox).abs().total_cmp(&gap(&c.bbox, &b.1 .0.bbox).abs()))
            .map(|(i, _)| i);
        (above, below)
    }

    /// Vertebrae immediately above and below `row` by centroid.
    fn by_row(&self, row: f64) -> (Option<usize>, Option<usize>) {
        let above = self.verts.iter().rposition(|(v, _)| v.centroid.0 < row);
        let below = self.verts.iter().position(|(v, _)| v.centroid.0 > row);
        (above, below)
    }

    fn level_key(&self, above: Option<usize>, below: Option<usize>) -> Option<String> {
        match (above, below) {
            (Some(a), Some(b)) => Some(format!("{}-{}", self.verts[a].1, self.verts[b].1)),
            (Some(a), None) => Some(format!("{}-{}", self.verts[a].1, name_below(&self.verts[a].1))),
            (None, Some(b)) => Some(format!("{}-{}", name_above(&self.verts[b].1), self.verts[b].1)),
            (None, None) => None,
        }
    }
}

fn entry(c: &Component, key: String) -> Result<LedgerEntry> {
    Ok(LedgerEntry { key, verdict: vote_normality(c)?, component_id: c.id, centroid: c.centroid })
}

/// Keys in `entries` must be unique; a duplicate keeps the larger component
/// and is reported.
fn dedupe(entries: Vec<(LedgerEntry, usize)>, kind: Kind, diagnostics: &mut Vec<String>) -> Vec<LedgerEntry> {
    let mut by_key: BTreeMap<String, (LedgerEntry, usize)> = BTreeMap::new();
    for (e, size) in entries {
        match by_key.get(&e.key) {
            Some((old, old_size)) => {
                diagnostics.push(format!(
                    "{kind} components {} and {} both map to {}; keeping the larger",
                    old.component_id, e.component_id, e.key
                ));
                if size > *old_size {
                    by_key.insert(e.key.clone(), (e, size));
                }
            }
            None => {
                by_key.insert(e.key.clone(), (e, size));
            }
        }
    }
    let mut out: Vec<LedgerEntry> = by_key.into_values().map(|(e, _)| e).collect();
    out.sort_by(|a, b| a.centroid.0.total_cmp(&b.centroid.0));
    out
}

/// Orders components top-down, keys them by vertebra level and votes each
/// verdict. Disc alternation is checked by proving `sep(disc, vertebra,
/// disc)` for every consecutive disc pair over `touch/2` facts derived with
/// the margin.
pub fn order_structures(set: &ComponentSet, cfg: &LabelingConfig) -> Result<LabelingOutcome> {
    let mut diagnostics = Vec::new();
    let mut verts: Vec<&Component> = set.of_kind(Kind::Vertebra).collect();
    if verts.is_empty() {
        return Err(CoreError::invalid("no vertebra found"));
    }
    verts.sort_by(|a, b| a.centroid.0.total_cmp(&b.centroid.0));
    let degraded = verts.len() != VERTEBRA_NAMES.len();
    if degraded {
        let msg = format!("expected 5 vertebrae, found {}; labeling top-down in degraded mode", verts.len());
        log::warn!("{msg}");
        diagnostics.push(msg);
    }
    let ordered = Ordered { verts: verts.iter().enumerate().map(|(i, &v)| (v, vertebra_name(i))).collect() };

    let mut ledger = StructureLedger::default();
    for (v, name) in &ordered.verts {
        ledger.vertebrae.push(entry(v, name.clone())?);
    }

    let mut discs: Vec<&Component> = set.of_kind(Kind::Disc).collect();
    discs.sort_by(|a, b| a.centroid.0.total_cmp(&b.centroid.0));
    let mut disc_entries = Vec::new();
    for d in &discs {
        let (mut above, mut below) = ordered.flanks(d, cfg.margin);
        if above.is_none() && below.is_none() {
            diagnostics.push(format!("disc component {} touches no vertebra within the margin; placed by centroid", d.id));
            (above, below) = ordered.by_row(d.centroid.0);
        }
        if let Some(key) = ordered.level_key(above, below) {
            disc_entries.push((entry(d, key)?, d.len()));
        }
    }
    ledger.discs = dedupe(disc_entries, Kind::Disc, &mut diagnostics);

    let mut foramen_entries = Vec::new();
    for f in set.of_kind(Kind::Foramen) {
        // Same level as the nearest disc by centroid row, else by vertebrae.
        let nearest = ledger
            .discs
            .iter()
            .min_by(|a, b| (a.centroid.0 - f.centroid.0).abs().total_cmp(&(b.centroid.0 - f.centroid.0).abs()));
        let key = match nearest {
            Some(d) => Some(d.key.clone()),
            None => {
                let (above, below) = ordered.by_row(f.centroid.0);
                ordered.level_key(above, below)
            }
        };
        if let Some(key) = key {
            foramen_entries.push((entry(f, key)?, f.len()));
        }
    }
    ledger.foramina = dedupe(foramen_entries, Kind::Foramen, &mut diagnostics);

    diagnostics.extend(check_alternation(&ordered, &discs, cfg.margin)?);
    Ok(LabelingOutcome { ledger, degraded, diagnostics })
}

/// Spatial facts for discs and vertebrae: `touch(upper, lower)` when the
/// lower box starts within `margin` of the upper box's bottom, and
/// `same(a, b)` for distinct discs.
fn spatial_facts(ordered: &Ordered, discs: &[&Component], margin: f64) -> String {
    let mut out = String::from(SPATIAL_RULES);
    for d in discs {
        let (above, below) = ordered.flanks(d, margin);
        if let Some(a) = above {
            let _ = writeln!(out, "touch(v{},d{}).", ordered.verts[a].0.id, d.id);
        }
        if let Some(b) = below {
            let _ = writeln!(out, "touch(d{},v{}).", d.id, ordered.verts[b].0.id);
        }
    }
    for a in discs {
        for b in discs {
            if a.id != b.id {
                let _ = writeln!(out, "same(d{},d{}).", a.id, b.id);
            }
        }
    }
    out
}

fn check_alternation(ordered: &Ordered, discs: &[&Component], margin: f64) -> Result<Vec<String>> {
    let program = Program::from_parsed(parse_program(&spatial_facts(ordered, discs, margin)).map_err(LogicError::from)?);
    let mut failures = Vec::new();
    for pair in discs.windows(2) {
        let (upper, lower) = (pair[0], pair[1]);
        let (_, Some(v)) = ordered.by_row(upper.centroid.0) else { continue };
        let vid = ordered.verts[v].0.id;
        let query = format!("sep(d{},v{vid},d{})", upper.id, lower.id);
        let proved = solve(&program, &parse_query(&query).map_err(LogicError::from)?, Limits::new(8, 1))?.succeeded();
        if !proved {
            failures.push(format!("alternation violated: {query} is not provable"));
        }
    }
    Ok(failures)
}

/// Components, spot removal and ordering in one pass.
pub fn label_map(map: &SegmentationMap, cfg: &LabelingConfig) -> Result<(SegmentationMap, LabelingOutcome)> {
    let raw = connected_components(map);
    let (cleaned, set) = remove_spots(map, &raw, cfg.min_area)?;
    Ok((cleaned, order_structures(&set, cfg)?))
}
