//! Histogram-of-oriented-gradients descriptor for square patches.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HogConfig {
    /// Patch side in pixels.
    pub patch: usize,
    /// Cell side in pixels.
    pub cell: usize,
    pub bins: usize,
    /// Block side in cells; blocks tile the patch without overlap.
    pub block: usize,
    pub epsilon: f64,
}

impl Default for HogConfig {
    fn default() -> Self {
        HogConfig { patch: 16, cell: 8, bins: 9, block: 2, epsilon: 1e-6 }
    }
}

impl HogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cell == 0 || self.bins == 0 || self.block == 0 || self.patch == 0 {
            return Err(CoreError::invalid(format!("HOG sizes must be positive: {self:?}")));
        }
        if self.patch % self.cell != 0 {
            return Err(CoreError::invalid(format!("patch {} is not a multiple of cell {}", self.patch, self.cell)));
        }
        if (self.patch / self.cell) % self.block != 0 {
            return Err(CoreError::invalid(format!(
                "{} cells per side do not tile into blocks of {}",
                self.patch / self.cell,
                self.block
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(CoreError::invalid(format!("HOG epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }

    pub fn cells_per_side(&self) -> usize {
        self.patch / self.cell
    }

    /// Descriptor length `N = bins × cells`.
    pub fn len(&self) -> usize {
        self.bins * self.cells_per_side() * self.cells_per_side()
    }

    pub fn blocks(&self) -> usize {
        (self.cells_per_side() / self.block).pow(2)
    }
}

/// Descriptor of a `height × width` row-major patch. Gradients are central
/// differences with edge-clamped neighbours; orientations are unsigned and
/// hard-binned; each block is scaled by `1/sqrt(|v|² + ε²)`.
///
/// Output order is block-major, then cell within block (row-major), then bin.
pub fn hog_descriptor(patch: &[f64], height: usize, width: usize, cfg: &HogConfig) -> Result<Vec<f64>> {
    if height % cfg.cell != 0 || width % cfg.cell != 0 || height == 0 || width == 0 {
        return Err(CoreError::invalid(format!("patch {height}x{width} is not a multiple of cell size {}", cfg.cell)));
    }
    if patch.len() != height * width {
        return Err(CoreError::invalid(format!("patch buffer of {} for {height}x{width}", patch.len())));
    }
    if cfg.bins == 0 || cfg.block == 0 || (height / cfg.cell) % cfg.block != 0 || (width / cfg.cell) % cfg.block != 0 {
        return Err(CoreError::invalid(format!("HOG configuration {cfg:?} does not tile {height}x{width}")));
    }
    let (ch, cw) = (height / cfg.cell, width / cfg.cell);
    let mut cells = vec![0.0; ch * cw * cfg.bins];
    let at = |r: usize, c: usize| patch[r * width + c];
    for r in 0..height {
        for c in 0..width {
            let gx = at(r, (c + 1).min(width - 1)) - at(r, c.saturating_sub(1));
            let gy = at((r + 1).min(height - 1), c) - at(r.saturating_sub(1), c);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let theta = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            let bin = ((theta / (180.0 / cfg.bins as f64)) as usize).min(cfg.bins - 1);
            cells[((r / cfg.cell) * cw + c / cfg.cell) * cfg.bins + bin] += mag;
        }
    }
    let (bh, bw) = (ch / cfg.block, cw / cfg.block);
    let mut out = Vec::with_capacity(cells.len());
    for br in 0..bh {
        for bc in 0..bw {
            let start = out.len();
            for r in br * cfg.block..(br + 1) * cfg.block {
                for c in bc * cfg.block..(bc + 1) * cfg.block {
                    out.extend_from_slice(&cells[(r * cw + c) * cfg.bins..(r * cw + c + 1) * cfg.bins]);
                }
            }
            let norm = (out[start..].iter().map(|v| v * v).sum::<f64>() + cfg.epsilon * cfg.epsilon).sqrt();
            out[start..].iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(out)
}

/// `size × size` window of `image` centred on `(row, col)`, shifted to lie
/// inside the image.
pub fn extract_patch(image: &[f64], height: usize, width: usize, row: usize, col: usize, size: usize) -> Vec<f64> {
    assert!(size <= height && size <= width, "patch {size} larger than image {height}x{width}");
    let top = row.saturating_sub(size / 2).min(height - size);
    let left = col.saturating_sub(size / 2).min(width - size);
    (top..top + size).flat_map(|r| image[r * width + left..r * width + left + size].iter().copied()).collect()
}
