//! Seven-class label grids and the binary PGM container.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const NUM_CLASSES: usize = 7;

pub const BACKGROUND: u8 = 0;
pub const NORMAL_VERTEBRA: u8 = 1;
pub const LVD: u8 = 2;
pub const NORMAL_DISC: u8 = 3;
pub const IDD: u8 = 4;
pub const NORMAL_FORAMEN: u8 = 5;
pub const NFS: u8 = 6;

pub const CLASS_NAMES: [&str; NUM_CLASSES] =
    ["background", "normal_vertebra", "lvd", "normal_disc", "idd", "normal_foramen", "nfs"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Vertebra,
    Disc,
    Foramen,
}

impl Kind {
    pub const ALL: [Kind; 3] = [Kind::Vertebra, Kind::Disc, Kind::Foramen];

    pub fn class(self, abnormal: bool) -> u8 {
        let base = match self {
            Kind::Vertebra => NORMAL_VERTEBRA,
            Kind::Disc => NORMAL_DISC,
            Kind::Foramen => NORMAL_FORAMEN,
        };
        base + u8::from(abnormal)
    }

    /// `(kind, abnormal)` for a foreground class.
    pub fn of_class(class: u8) -> Option<(Kind, bool)> {
        match class {
            NORMAL_VERTEBRA => Some((Kind::Vertebra, false)),
            LVD => Some((Kind::Vertebra, true)),
            NORMAL_DISC => Some((Kind::Disc, false)),
            IDD => Some((Kind::Disc, true)),
            NORMAL_FORAMEN => Some((Kind::Foramen, false)),
            NFS => Some((Kind::Foramen, true)),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Vertebra => "vertebra",
            Kind::Disc => "disc",
            Kind::Foramen => "foramen",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMap {
    height: usize,
    width: usize,
    classes: Vec<u8>,
}

impl SegmentationMap {
    pub fn new(height: usize, width: usize, classes: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || classes.len() != height * width {
            return Err(CoreError::invalid(format!("segmentation map {height}x{width} with {} values", classes.len())));
        }
        if let Some(&bad) = classes.iter().find(|&&c| c as usize >= NUM_CLASSES) {
            return Err(CoreError::invalid(format!("class value {bad} outside 0..{NUM_CLASSES}")));
        }
        Ok(SegmentationMap { height, width, classes })
    }

    pub fn background(height: usize, width: usize) -> Self {
        SegmentationMap { height, width, classes: vec![BACKGROUND; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.classes[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, class: u8) {
        assert!((class as usize) < NUM_CLASSES);
        self.classes[row * self.width + col] = class;
    }

    pub fn histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        self.classes.iter().for_each(|&c| h[c as usize] += 1);
        h
    }

    pub fn present(&self) -> [bool; NUM_CLASSES] {
        self.histogram().map(|n| n > 0)
    }

    /// Map translated by `(dr, dc)`; vacated pixels become background and
    /// pixels pushed past the border are dropped.
    pub fn shifted(&self, dr: isize, dc: isize) -> Self {
        let mut out = Self::background(self.height, self.width);
        for r in 0..self.height {
            for c in 0..self.width {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr >= 0 && nc >= 0 && (nr as usize) < self.height && (nc as usize) < self.width {
                    out.classes[nr as usize * self.width + nc as usize] = self.get(r, c);
                }
            }
        }
        out
    }

    pub fn write_pgm<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_pgm(w, self.width, self.height, &self.classes)
    }

    pub fn read_pgm<R: Read>(r: R) -> Result<Self> {
        let (w, h, data) = read_pgm(r)?;
        Self::new(h, w, data)
    }
}

/// Greyscale image in `[0,1]` with its truth map.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: Vec<f64>,
    pub truth: SegmentationMap,
}

impl LabeledImage {
    pub fn new(image: Vec<f64>, truth: SegmentationMap) -> Result<Self> {
        if image.len() != truth.height() * truth.width() {
            return Err(CoreError::invalid(format!(
                "image of {} pixels paired with a {}x{} truth map",
                image.len(),
                truth.height(),
                truth.width()
            )));
        }
        Ok(LabeledImage { image, truth })
    }

    pub fn height(&self) -> usize {
        self.truth.height()
    }

    pub fn width(&self) -> usize {
        self.truth.width()
    }
}

/// Binary greymap, maxval 255, row-major.
pub fn write_pgm<W: Write>(mut w: W, width: usize, height: usize, pixels: &[u8]) -> std::io::Result<()> {
    assert_eq!(pixels.len(), width * height);
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(pixels)
}

/// Parses a P5 greymap with maxval ≤ 255; `#` comments are skipped.
pub fn read_pgm<R: Read>(r: R) -> Result<(usize, usize, Vec<u8>)> {
    let mut r = BufReader::new(r);
    let mut header = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < 4 {
        header.clear();
        if r.read_until(b'\n', &mut header).map_err(|e| CoreError::invalid(format!("pgm: {e}")))? == 0 {
            return Err(CoreError::invalid("pgm: truncated header"));
        }
        let line = String::from_utf8_lossy(&header);
        let line = line.split('#').next().unwrap_or("");
        tokens.extend(line.split_whitespace().map(str::to_string));
    }
    if tokens.len() != 4 || tokens[0] != "P5" {
        return Err(CoreError::invalid(format!("pgm: unsupported header {tokens:?}")));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| CoreError::invalid(format!("pgm: bad number {s}")));
    let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(CoreError::invalid(format!("pgm: maxval {maxval} unsupported")));
    }
    let mut data = vec![0u8; w * h];
    r.read_exact(&mut data).map_err(|_| CoreError::invalid("pgm: truncated pixel data"))?;
    Ok((w, h, data))
}

/// Intensities in `[0,1]` quantized to bytes.
pub fn quantize(image: &[f64]) -> Vec<u8> {
    image.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

pub fn dequantize(bytes: &[u8]) -> Vec<f64> {
    bytes.iter().map(|&b| f64::from(b) / 255.0).collect()
}
