//! Scene-completion (SC) and semantic-scene-completion (SSC) evaluation,
//! fold aggregation and report formatting.
//!
//! SC scores the occluded part of the frustum: every occupied occluded voxel
//! plus a seeded sample of empty occluded ones (1:1 by default). SSC scores
//! classes 1–11 over observed surfaces and occluded space; classes absent from
//! both prediction and ground truth are left out of the mIoU. Ratios with a
//! zero denominator are reported as 0 and flagged.

mod report;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{VisibilityGrid, VisibilityState};
use crate::losses::{IGNORE_LABEL, NUM_CLASSES};

pub use report::{
    aggregate_folds, format_ablation_table, format_mean_std, format_results_table, read_reports_csv, write_reports_csv,
    EvalReport, FoldSummary, MeanStd, CLASS_NAMES, CSV_HEADER,
};

/// Semantic classes scored by SSC (class 0 is empty space).
pub const SEMANTIC_CLASSES: usize = NUM_CLASSES - 1;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("evaluation region is empty")]
    EmptyEvaluationRegion,
    #[error("label {0} outside 0..=11")]
    LabelOutOfRange(u8),
    #[error("at least two fold reports are needed, got {0}")]
    TooFewFolds(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("format violation: {0}")]
    FormatViolation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn check_len(what: &str, a: usize, b: usize) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::ShapeMismatch(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (100.0 * num as f64 / den as f64, false)
    }
}

/// 12×12 counts; rows are ground truth, columns prediction.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accumulates masked voxels. Voxels whose ground truth is unannotated are skipped.
    pub fn accumulate(&mut self, pred: &[u8], gt: &[u8], mask: &[bool]) -> Result<(), MetricsError> {
        check_len("prediction vs ground truth", pred.len(), gt.len())?;
        check_len("labels vs mask", gt.len(), mask.len())?;
        for i in 0..gt.len() {
            if !mask[i] || gt[i] == IGNORE_LABEL {
                continue;
            }
            for l in [gt[i], pred[i]] {
                if l as usize >= NUM_CLASSES {
                    return Err(MetricsError::LabelOutOfRange(l));
                }
            }
            self.counts[gt[i] as usize][pred[i] as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for g in 0..NUM_CLASSES {
            for p in 0..NUM_CLASSES {
                self.counts[g][p] += other.counts[g][p];
            }
        }
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// (TP, FP, FN) for one class.
    pub fn class_counts(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.counts[c][c];
        let fp = (0..NUM_CLASSES).map(|g| self.counts[g][c]).sum::<u64>() - tp;
        let fn_ = self.counts[c].iter().sum::<u64>() - tp;
        (tp, fp, fn_)
    }

    /// IoU in percent, or `None` when the class is absent from both sides.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let (tp, fp, fn_) = self.class_counts(c);
        let den = tp + fp + fn_;
        (den > 0).then(|| 100.0 * tp as f64 / den as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ScCounts {
    pub fn merge(&mut self, o: &ScCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn metrics(&self) -> ScMetrics {
        let (precision, p0) = ratio(self.tp, self.tp + self.fp);
        let (recall, r0) = ratio(self.tp, self.tp + self.fn_);
        let (iou, i0) = ratio(self.tp, self.tp + self.fp + self.fn_);
        ScMetrics {
            precision,
            recall,
            iou,
            zero_denominator: p0 || r0 || i0,
        }
    }
}

/// Percentages. `zero_denominator` marks that some ratio was undefined and
/// reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScMetrics {
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
    pub zero_denominator: bool,
}

/// SC evaluation region: occluded annotated voxels that are occupied in the
/// ground truth, plus `empty_ratio ×` as many seeded empty occluded ones.
pub fn sc_region(
    gt: &[u8],
    visibility: &VisibilityGrid,
    empty_ratio: f64,
    seed: u64,
) -> Result<Vec<bool>, MetricsError> {
    check_len("labels vs visibility", gt.len(), visibility.states.len())?;
    let mut region = vec![false; gt.len()];
    let mut empties = Vec::new();
    let mut occupied = 0usize;
    for (i, (&l, &s)) in gt.iter().zip(&visibility.states).enumerate() {
        if s != VisibilityState::Occluded || l == IGNORE_LABEL {
            continue;
        }
        if l as usize >= NUM_CLASSES {
            return Err(MetricsError::LabelOutOfRange(l));
        }
        if l == 0 {
            empties.push(i);
        } else {
            region[i] = true;
            occupied += 1;
        }
    }
    let quota = ((empty_ratio * occupied as f64).round() as usize).min(empties.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for j in sample(&mut rng, empties.len(), quota) {
        region[empties[j]] = true;
    }
    Ok(region)
}

/// Binary occupancy counts over a region.
pub fn sc_counts(pred: &[u8], gt: &[u8], region: &[bool]) -> Result<ScCounts, MetricsError> {
    check_len("prediction vs ground truth", pred.len(), gt.len())?;
    check_len("labels vs region", gt.len(), region.len())?;
    let mut c = ScCounts::default();
    for i in (0..gt.len()).filter(|&i| region[i]) {
        match (gt[i] != 0, pred[i] != 0) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// SC precision, recall and IoU with a 1:1 empty-occluded sample.
pub fn sc_eval(
    pred: &[u8],
    gt: &[u8],
    visibility: &VisibilityGrid,
    resample_seed: u64,
) -> Result<ScMetrics, MetricsError> {
    sc_eval_with_ratio(pred, gt, visibility, 1.0, resample_seed)
}

pub fn sc_eval_with_ratio(
    pred: &[u8],
    gt: &[u8],
    visibility: &VisibilityGrid,
    empty_ratio: f64,
    resample_seed: u64,
) -> Result<ScMetrics, MetricsError> {
    let region = sc_region(gt, visibility, empty_ratio, resample_seed)?;
    let counts = sc_counts(pred, gt, &region)?;
    if counts.total() == 0 {
        return Err(MetricsError::EmptyEvaluationRegion);
    }
    Ok(counts.metrics())
}

/// SSC region: annotated voxels that are observed surface or occluded.
pub fn ssc_region(gt: &[u8], visibility: &VisibilityGrid) -> Result<Vec<bool>, MetricsError> {
    check_len("labels vs visibility", gt.len(), visibility.states.len())?;
    Ok(gt
        .iter()
        .zip(&visibility.states)
        .map(|(&l, &s)| l != IGNORE_LABEL && matches!(s, VisibilityState::Surface | VisibilityState::Occluded))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SscMetrics {
    /// IoU in percent for classes 1–11; `None` where the class is absent from
    /// both prediction and ground truth.
    pub per_class_iou: [Option<f64>; SEMANTIC_CLASSES],
    pub miou: f64,
}

impl SscMetrics {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let per_class_iou = std::array::from_fn(|i| cm.iou(i + 1));
        let defined: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
        let miou = if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        };
        SscMetrics { per_class_iou, miou }
    }
}

pub fn ssc_eval(pred: &[u8], gt: &[u8], mask: &[bool]) -> Result<SscMetrics, MetricsError> {
    let mut cm = ConfusionMatrix::new();
    cm.accumulate(pred, gt, mask)?;
    Ok(SscMetrics::from_confusion(&cm))
}
