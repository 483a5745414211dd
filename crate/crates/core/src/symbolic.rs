//! Prior-knowledge graph over the seven classes: averaged HOG node
//! features and conditional co-occurrence edges.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::components::class_regions;
use crate::error::{CoreError, Result};
use crate::hog::{extract_patch, hog_descriptor, HogConfig};
use crate::segmap::{LabeledImage, BACKGROUND, CLASS_NAMES, NUM_CLASSES};

/// Background patches sampled per image.
pub const BACKGROUND_PATCHES: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct SymbolicGraph {
    /// Descriptor length.
    pub n: usize,
    /// `M × N` row-major node features.
    pub v: Vec<f64>,
    /// `M × M` row-major; `e[i][j] = P(class j present | class i present)`.
    pub e: Vec<f64>,
    /// Classes absent from the corpus; their rows are zero.
    pub absent: [bool; NUM_CLASSES],
}

impl SymbolicGraph {
    pub const M: usize = NUM_CLASSES;

    pub fn class_names(&self) -> [&'static str; NUM_CLASSES] {
        CLASS_NAMES
    }

    pub fn v_row(&self, m: usize) -> &[f64] {
        &self.v[m * self.n..(m + 1) * self.n]
    }

    pub fn edge(&self, i: usize, j: usize) -> f64 {
        self.e[i * NUM_CLASSES + j]
    }

    /// Hard adjacency `E ≥ 0.5` with the diagonal cleared.
    pub fn hard_edges(&self) -> Vec<f64> {
        let m = NUM_CLASSES;
        (0..m * m).map(|k| if k / m != k % m && self.e[k] >= 0.5 { 1.0 } else { 0.0 }).collect()
    }

    pub fn build(corpus: &[LabeledImage], cfg: &HogConfig) -> Result<Self> {
        let (v, absent) = build_node_features(corpus, cfg)?;
        let e = build_edges(corpus)?;
        Ok(SymbolicGraph { n: cfg.len(), v, e, absent })
    }

    /// Header `M N`, `M` rows of V, a blank line, `M` rows of E.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", NUM_CLASSES, self.n)?;
        let row = |xs: &[f64]| xs.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
        for m in 0..NUM_CLASSES {
            writeln!(w, "{}", row(self.v_row(m)))?;
        }
        writeln!(w)?;
        for m in 0..NUM_CLASSES {
            writeln!(w, "{}", row(&self.e[m * NUM_CLASSES..(m + 1) * NUM_CLASSES]))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let bad = |msg: String| CoreError::invalid(format!("graph file: {msg}"));
        let lines: Vec<String> =
            r.lines().collect::<std::io::Result<_>>().map_err(|e| bad(e.to_string()))?;
        let header: Vec<usize> = lines
            .first()
            .ok_or_else(|| bad("empty".into()))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(format!("bad header token {t:?}"))))
            .collect::<Result<_>>()?;
        let [m, n] = header[..] else { return Err(bad(format!("header {:?}", lines[0]))) };
        if m != NUM_CLASSES || n == 0 {
            return Err(bad(format!("expected {NUM_CLASSES} nodes and positive N, got {m} {n}")));
        }
        if lines.len() < 2 + 2 * m || !lines[1 + m].trim().is_empty() {
            return Err(bad("expected M rows of V, a blank line and M rows of E".into()));
        }
        let parse_rows = |rows: &[String], width: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(rows.len() * width);
            for (i, line) in rows.iter().enumerate() {
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| bad(format!("bad number {t:?}"))))
                    .collect::<Result<_>>()?;
                if vals.len() != width || vals.iter().any(|v| !v.is_finite()) {
                    return Err(bad(format!("row {i} has {} finite values, expected {width}", vals.len())));
                }
                out.extend(vals);
            }
            Ok(out)
        };
        let v = parse_rows(&lines[1..1 + m], n)?;
        let e = parse_rows(&lines[2 + m..2 + 2 * m], m)?;
        if e.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(bad("edge weights must lie in [0,1]".into()));
        }
        let mut absent = [false; NUM_CLASSES];
        for (i, a) in absent.iter_mut().enumerate() {
            *a = e[i * m + i] == 0.0;
        }
        Ok(SymbolicGraph { n, v, e, absent })
    }
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    bytes.into_iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Per-image descriptor sums and counts for each class.
fn image_contribution(item: &LabeledImage, cfg: &HogConfig) -> Result<(Vec<f64>, [usize; NUM_CLASSES])> {
    let (h, w) = (item.height(), item.width());
    let n = cfg.len();
    let mut sums = vec![0.0; NUM_CLASSES * n];
    let mut counts = [0usize; NUM_CLASSES];
    let mut add = |class: usize, r: usize, c: usize| -> Result<()> {
        let patch = extract_patch(&item.image, h, w, r, c, cfg.patch);
        let d = hog_descriptor(&patch, cfg.patch, cfg.patch, cfg)?;
        sums[class * n..(class + 1) * n].iter_mut().zip(&d).for_each(|(s, x)| *s += x);
        counts[class] += 1;
        Ok(())
    };
    for region in class_regions(&item.truth) {
        let (r, c) = region.centroid();
        add(region.key as usize, r.round() as usize, c.round() as usize)?;
    }
    // Background centres drawn from a stream keyed by the image content, so
    // the result depends on the corpus multiset only.
    let bg: Vec<usize> = (0..h * w).filter(|&i| item.truth.classes()[i] == BACKGROUND).collect();
    if !bg.is_empty() {
        let key = fnv1a(item.image.iter().flat_map(|v| v.to_bits().to_le_bytes()).chain(item.truth.classes().iter().copied()));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        for _ in 0..BACKGROUND_PATCHES {
            let i = bg[rng.gen_range(0..bg.len())];
            add(BACKGROUND as usize, i / w, i % w)?;
        }
    }
    Ok((sums, counts))
}

/// Mean HOG descriptor per class. Patches are centred on the class's
/// connected components; background patches are sampled from background
/// pixels. Absent classes get zero rows and are flagged.
pub fn build_node_features(corpus: &[LabeledImage], cfg: &HogConfig) -> Result<(Vec<f64>, [bool; NUM_CLASSES])> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(CoreError::invalid("symbolic graph needs a non-empty corpus"));
    }
    let mut parts = corpus.iter().map(|item| image_contribution(item, cfg)).collect::<Result<Vec<_>>>()?;
    // Sum in a canonical order so the result is invariant to corpus order.
    parts.sort_by(|a, b| {
        a.0.iter().map(|x| x.to_bits()).cmp(b.0.iter().map(|x| x.to_bits())).then(a.1.cmp(&b.1))
    });
    let n = cfg.len();
    let mut v = vec![0.0; NUM_CLASSES * n];
    let mut counts = [0usize; NUM_CLASSES];
    for (sums, cnt) in &parts {
        v.iter_mut().zip(sums).for_each(|(a, b)| *a += b);
        counts.iter_mut().zip(cnt).for_each(|(a, b)| *a += b);
    }
    let mut absent = [false; NUM_CLASSES];
    for m in 0..NUM_CLASSES {
        if counts[m] == 0 {
            absent[m] = true;
            log::warn!("class {} absent from the corpus; its node feature row is zero", CLASS_NAMES[m]);
        } else {
            v[m * n..(m + 1) * n].iter_mut().for_each(|x| *x /= counts[m] as f64);
        }
    }
    Ok((v, absent))
}

/// `E[i][j] = #(images with i and j) / #(images with i)`; rows of absent
/// classes are zero.
pub fn build_edges(corpus: &[LabeledImage]) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(CoreError::invalid("symbolic graph needs a non-empty corpus"));
    }
    let m = NUM_CLASSES;
    let mut both = vec![0usize; m * m];
    for item in corpus {
        let present = item.truth.present();
        for i in 0..m {
            for j in 0..m {
                if present[i] && present[j] {
                    both[i * m + j] += 1;
                }
            }
        }
    }
    Ok((0..m * m)
        .map(|k| {
            let denom = both[(k / m) * m + k / m];
            if denom == 0 {
                0.0
            } else {
                both[k] as f64 / denom as f64
            }
        })
        .collect())
}
