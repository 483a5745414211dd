//! Segmentation, labeling and report metrics, per image and over a corpus.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::labeling::StructureLedger;
use crate::report::{evaluate_report_keywords, KeywordCounts, Report};
use crate::segmap::{Kind, SegmentationMap, CLASS_NAMES, IDD, LVD, NFS, NUM_CLASSES};
use crate::{CoreError, Result};

/// Disease classes and the structure kind each is a verdict on.
pub const DISEASES: [(&str, u8, Kind); 3] = [("LVD", LVD, Kind::Vertebra), ("IDD", IDD, Kind::Disc), ("NFS", NFS, Kind::Foramen)];

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 { 1.0 } else { num as f64 / den as f64 }
}

fn same_extent(pred: &SegmentationMap, truth: &SegmentationMap) -> Result<()> {
    if (pred.height(), pred.width()) != (truth.height(), truth.width()) {
        return Err(CoreError::invalid(format!(
            "prediction is {}x{} but truth is {}x{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    Ok(())
}

pub fn pixel_accuracy(pred: &SegmentationMap, truth: &SegmentationMap) -> Result<f64> {
    same_extent(pred, truth)?;
    let hits = pred.classes().iter().zip(truth.classes()).filter(|(p, t)| p == t).count();
    Ok(ratio(hits, truth.classes().len()))
}

/// `2|P∩T| / (|P|+|T|)` per class, with 0/0 taken as 1.
pub fn dice_per_class(pred: &SegmentationMap, truth: &SegmentationMap) -> Result<[f64; NUM_CLASSES]> {
    same_extent(pred, truth)?;
    let mut inter = [0usize; NUM_CLASSES];
    for (&p, &t) in pred.classes().iter().zip(truth.classes()) {
        if p == t {
            inter[p as usize] += 1;
        }
    }
    let (hp, ht) = (pred.histogram(), truth.histogram());
    Ok(std::array::from_fn(|c| ratio(2 * inter[c], hp[c] + ht[c])))
}

/// Mean over the six foreground classes.
pub fn mean_foreground_dice(dice: &[f64; NUM_CLASSES]) -> f64 {
    dice[1..].iter().sum::<f64>() / (NUM_CLASSES - 1) as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn record(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }
}

impl std::ops::AddAssign for Confusion {
    fn add_assign(&mut self, o: Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

/// Instance-level confusion for one disease: each truth structure of the
/// disease's kind is one instance. A structure missing from the predicted
/// ledger counts as predicted normal.
pub fn instance_confusion(pred: &StructureLedger, truth: &StructureLedger, kind: Kind) -> Confusion {
    let mut c = Confusion::default();
    for e in truth.table(kind) {
        let predicted = pred.get(kind, &e.key).is_some_and(|p| p.verdict.is_abnormal());
        c.record(e.verdict.is_abnormal(), predicted);
    }
    c
}

/// Pixel-level confusion for one class over the whole map.
pub fn pixel_confusion(pred: &SegmentationMap, truth: &SegmentationMap, class: u8) -> Result<Confusion> {
    same_extent(pred, truth)?;
    let mut c = Confusion::default();
    for (&p, &t) in pred.classes().iter().zip(truth.classes()) {
        c.record(t == class, p == class);
    }
    Ok(c)
}

/// Share of truth ledger entries reproduced with the same key and verdict.
pub fn labeling_accuracy(pred: &StructureLedger, truth: &StructureLedger) -> f64 {
    let total = truth.verdicts().len();
    let hits = truth.verdicts().iter().filter(|(k, key, v)| pred.get(*k, key).is_some_and(|p| p.verdict == *v)).count();
    ratio(hits, total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiseaseMetrics {
    pub instance_sensitivity: f64,
    pub instance_specificity: f64,
    pub pixel_sensitivity: f64,
    pub pixel_specificity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub images: usize,
    pub pixel_accuracy: f64,
    /// Per class, background first.
    pub dice: Vec<f64>,
    pub mean_dice: f64,
    pub diseases: BTreeMap<String, DiseaseMetrics>,
    pub labeling_accuracy: f64,
    pub keyword_precision: f64,
    pub keyword_recall: f64,
    pub cause_precision: f64,
    pub cause_recall: f64,
}

impl MetricsRecord {
    /// Every metric as a named scalar, in a fixed order.
    pub fn scalars(&self) -> Vec<(String, f64)> {
        let mut out = vec![("pixel_accuracy".to_string(), self.pixel_accuracy)];
        for (name, d) in CLASS_NAMES.iter().zip(&self.dice) {
            out.push((format!("dice_{name}"), *d));
        }
        out.push(("mean_dice".into(), self.mean_dice));
        for (name, d) in &self.diseases {
            out.push((format!("{name}_instance_sensitivity"), d.instance_sensitivity));
            out.push((format!("{name}_instance_specificity"), d.instance_specificity));
            out.push((format!("{name}_pixel_sensitivity"), d.pixel_sensitivity));
            out.push((format!("{name}_pixel_specificity"), d.pixel_specificity));
        }
        out.push(("labeling_accuracy".into(), self.labeling_accuracy));
        out.push(("keyword_precision".into(), self.keyword_precision));
        out.push(("keyword_recall".into(), self.keyword_recall));
        out.push(("cause_precision".into(), self.cause_precision));
        out.push(("cause_recall".into(), self.cause_recall));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in self.scalars() {
            let _ = writeln!(s, "{k},{v:.6}");
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }
}

/// Per-image metrics are averaged; confusions and keyword counts are pooled.
#[derive(Clone, Debug, Default)]
pub struct MetricsAccumulator {
    images: usize,
    accuracy: f64,
    dice: [f64; NUM_CLASSES],
    instance: [Confusion; 3],
    pixel: [Confusion; 3],
    labeled: f64,
    keywords: KeywordCounts,
}

impl MetricsAccumulator {
    pub fn add(
        &mut self,
        pred: &SegmentationMap,
        truth: &SegmentationMap,
        pred_ledger: &StructureLedger,
        truth_ledger: &StructureLedger,
        report: Option<&Report>,
    ) -> Result<()> {
        self.accuracy += pixel_accuracy(pred, truth)?;
        for (sum, d) in self.dice.iter_mut().zip(dice_per_class(pred, truth)?) {
            *sum += d;
        }
        for (i, &(_, class, kind)) in DISEASES.iter().enumerate() {
            self.instance[i] += instance_confusion(pred_ledger, truth_ledger, kind);
            self.pixel[i] += pixel_confusion(pred, truth, class)?;
        }
        self.labeled += labeling_accuracy(pred_ledger, truth_ledger);
        if let Some(r) = report {
            self.keywords += evaluate_report_keywords(r, truth_ledger);
        }
        self.images += 1;
        Ok(())
    }

    pub fn finish(&self) -> Result<MetricsRecord> {
        if self.images == 0 {
            return Err(CoreError::invalid("no images to evaluate"));
        }
        let n = self.images as f64;
        let dice: Vec<f64> = self.dice.iter().map(|d| d / n).collect();
        let diseases = DISEASES
            .iter()
            .enumerate()
            .map(|(i, (name, _, _))| {
                let m = DiseaseMetrics {
                    instance_sensitivity: self.instance[i].sensitivity(),
                    instance_specificity: self.instance[i].specificity(),
                    pixel_sensitivity: self.pixel[i].sensitivity(),
                    pixel_specificity: self.pixel[i].specificity(),
                };
                (name.to_string(), m)
            })
            .collect();
        let dice_arr: [f64; NUM_CLASSES] = std::array::from_fn(|c| dice[c]);
        Ok(MetricsRecord {
            images: self.images,
            pixel_accuracy: self.accuracy / n,
            mean_dice: mean_foreground_dice(&dice_arr),
            dice,
            diseases,
            labeling_accuracy: self.labeled / n,
            keyword_precision: self.keywords.structures.precision(),
            keyword_recall: self.keywords.structures.recall(),
            cause_precision: self.keywords.causes.precision(),
            cause_recall: self.keywords.causes.recall(),
        })
    }
}

/// Mean and sample standard deviation (n − 1); constant input gives
/// exactly its value and std 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    if values.iter().all(|v| *v == values[0]) {
        return (values[0], 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossvalSummary {
    pub folds: Vec<MetricsRecord>,
    /// Metric name → (mean, sample std) over folds.
    pub summary: Vec<(String, f64, f64)>,
}

impl CrossvalSummary {
    pub fn new(folds: Vec<MetricsRecord>) -> Result<Self> {
        if folds.len() < 2 {
            return Err(CoreError::invalid(format!("cross-validation needs at least 2 folds, got {}", folds.len())));
        }
        let names: Vec<String> = folds[0].scalars().into_iter().map(|(k, _)| k).collect();
        let per_fold: Vec<Vec<f64>> = folds.iter().map(|f| f.scalars().into_iter().map(|(_, v)| v).collect()).collect();
        let summary = names
            .into_iter()
            .enumerate()
            .map(|(i, name)| {
                let vals: Vec<f64> = per_fold.iter().map(|f| f[i]).collect();
                let (m, s) = mean_std(&vals);
                (name, m, s)
            })
            .collect();
        Ok(CrossvalSummary { folds, summary })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,mean,std\n");
        for (k, m, sd) in &self.summary {
            let _ = writeln!(s, "{k},{m:.6},{sd:.6}");
        }
        s
    }
}
