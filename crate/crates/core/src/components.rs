//! 4-connected regions of a segmentation map.

use serde::{Deserialize, Serialize};

use crate::phantom::BBox;
use crate::segmap::{SegmentationMap, BACKGROUND, NUM_CLASSES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    /// Grouping key shared by every pixel of the region.
    pub key: u8,
    /// Row-major `(row, col)` pixels, sorted.
    pub pixels: Vec<(usize, usize)>,
    pub bbox: BBox,
    /// Pixel count per class code.
    pub class_counts: [usize; NUM_CLASSES],
}

impl Region {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn centroid(&self) -> (f64, f64) {
        let n = self.pixels.len() as f64;
        let (sr, sc) = self.pixels.iter().fold((0.0, 0.0), |(a, b), &(r, c)| (a + r as f64, b + c as f64));
        (sr / n, sc / n)
    }
}

/// Regions of pixels whose `key(class)` is equal and not `None`, ordered by
/// their first pixel in raster order (top row, then left column).
pub fn regions(map: &SegmentationMap, key: impl Fn(u8) -> Option<u8>) -> Vec<Region> {
    let (h, w) = (map.height(), map.width());
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if seen[start] {
            continue;
        }
        let Some(k) = key(map.classes()[start]) else { continue };
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        let mut class_counts = [0; NUM_CLASSES];
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            pixels.push((r, c));
            class_counts[map.classes()[i] as usize] += 1;
            let mut visit = |j: usize| {
                if !seen[j] && key(map.classes()[j]) == Some(k) {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        pixels.sort_unstable();
        let mut bbox = BBox::empty();
        pixels.iter().for_each(|&(r, c)| bbox.include(r, c));
        out.push(Region { key: k, pixels, bbox, class_counts });
    }
    out
}

/// Regions of each foreground class separately.
pub fn class_regions(map: &SegmentationMap) -> Vec<Region> {
    regions(map, |c| (c != BACKGROUND).then_some(c))
}
