//! Class statistics, K-means class re-weighting, cross-entropy losses and the
//! combined two-head objective.
//!
//! Re-weighting clusters the log-frequencies of the classes present, gives
//! every class the inverse median frequency of its cluster, rescales so the
//! present classes average weight 1 and clamps to [0.01, 100]. The weighted
//! cross-entropy is normalized by the summed weight of the included voxels.

mod ce;
mod kmeans;

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tensor};
use crate::geometry::VisibilityGrid;

pub use ce::{smooth_ce, weighted_ce};
pub use kmeans::{kmeans_1d, KMeansResult, KMEANS_RESTARTS};

pub const NUM_CLASSES: usize = 12;
/// Label of voxels without annotation; excluded from every loss and metric.
pub const IGNORE_LABEL: u8 = 255;
pub const WEIGHT_MIN: f64 = 0.01;
pub const WEIGHT_MAX: f64 = 100.0;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("label {0} outside 0..=11")]
    LabelOutOfRange(u8),
    #[error("k = {k} is invalid for {n} values")]
    InvalidK { k: usize, n: usize },
    #[error("every class frequency is zero")]
    AllZeroFrequencies,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mask selects no voxels")]
    EmptyMask,
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("format violation: {0}")]
    FormatViolation(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-class loss weights, all positive and finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeights {
    weights: [f64; NUM_CLASSES],
}

impl ClassWeights {
    pub fn new(weights: [f64; NUM_CLASSES]) -> Result<Self, LossError> {
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(LossError::InvalidConfig(format!(
                "class weight {w} is not positive and finite"
            )));
        }
        Ok(ClassWeights { weights })
    }

    pub fn uniform() -> Self {
        ClassWeights {
            weights: [1.0; NUM_CLASSES],
        }
    }

    pub fn get(&self, class: usize) -> f64 {
        self.weights[class]
    }

    pub fn as_array(&self) -> [f64; NUM_CLASSES] {
        self.weights
    }

    /// Twelve lines `class_index weight`.
    pub fn to_text(&self) -> String {
        self.weights
            .iter()
            .enumerate()
            .map(|(c, w)| format!("{c} {w}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self, LossError> {
        let mut weights = [f64::NAN; NUM_CLASSES];
        let mut seen = [false; NUM_CLASSES];
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let bad = || LossError::FormatViolation(format!("class weight line `{line}`"));
            let mut it = line.split_whitespace();
            let c: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let w: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if it.next().is_some() || c >= NUM_CLASSES || seen[c] {
                return Err(bad());
            }
            seen[c] = true;
            weights[c] = w;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(LossError::FormatViolation(format!("no weight for class {c}")));
        }
        ClassWeights::new(weights)
    }

    pub fn write_file(&self, path: &Path) -> Result<(), LossError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, LossError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Per-voxel include flags aligned with a label volume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelMask {
    include: Vec<bool>,
}

impl VoxelMask {
    pub fn new(include: Vec<bool>) -> Self {
        VoxelMask { include }
    }

    pub fn all(len: usize) -> Self {
        VoxelMask {
            include: vec![true; len],
        }
    }

    /// In-frustum voxels that carry an annotation.
    pub fn frustum(labels: &[u8], visibility: &VisibilityGrid) -> Result<Self, LossError> {
        check_aligned(labels, visibility)?;
        Ok(VoxelMask {
            include: labels
                .iter()
                .zip(&visibility.states)
                .map(|(&l, s)| l != IGNORE_LABEL && s.in_frustum())
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.include.len()
    }

    pub fn is_empty(&self) -> bool {
        self.include.is_empty()
    }

    pub fn includes(&self, i: usize) -> bool {
        self.include[i]
    }

    pub fn count(&self) -> usize {
        self.include.iter().filter(|b| **b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.include
    }

    /// Concatenation, for batching masks of several samples.
    pub fn concat(masks: &[VoxelMask]) -> Self {
        VoxelMask {
            include: masks.iter().flat_map(|m| m.include.iter().copied()).collect(),
        }
    }
}

fn check_aligned(labels: &[u8], visibility: &VisibilityGrid) -> Result<(), LossError> {
    if labels.len() != visibility.states.len() {
        return Err(LossError::ShapeMismatch(format!(
            "{} labels vs {} visibility states",
            labels.len(),
            visibility.states.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum WeightingMode {
    #[serde(rename = "kmeans")]
    KMeansReweight,
    #[serde(rename = "resample")]
    Resample,
}

impl std::str::FromStr for WeightingMode {
    type Err = LossError;
    fn from_str(s: &str) -> Result<Self, LossError> {
        match s {
            "kmeans" => Ok(WeightingMode::KMeansReweight),
            "resample" => Ok(WeightingMode::Resample),
            _ => Err(LossError::InvalidConfig(format!(
                "weighting must be kmeans or resample, got `{s}`"
            ))),
        }
    }
}

impl std::fmt::Display for WeightingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WeightingMode::KMeansReweight => "kmeans",
            WeightingMode::Resample => "resample",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CombinedLossConfig {
    pub lambda: f64,
    pub smoothing: f64,
    pub weighting_mode: WeightingMode,
    pub kmeans_k: usize,
    /// Empty-to-occupied ratio for [`WeightingMode::Resample`].
    pub resample_ratio: f64,
}

impl Default for CombinedLossConfig {
    fn default() -> Self {
        CombinedLossConfig {
            lambda: 1.0,
            smoothing: 0.1,
            weighting_mode: WeightingMode::KMeansReweight,
            kmeans_k: 3,
            resample_ratio: 2.0,
        }
    }
}

impl CombinedLossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(LossError::InvalidConfig(format!(
                "lambda must be ≥ 0, got {}",
                self.lambda
            )));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(LossError::InvalidConfig(format!(
                "smoothing must lie in [0, 1), got {}",
                self.smoothing
            )));
        }
        if self.kmeans_k == 0 {
            return Err(LossError::InvalidConfig("kmeans_k must be ≥ 1".into()));
        }
        if !(self.resample_ratio.is_finite() && self.resample_ratio > 0.0) {
            return Err(LossError::InvalidConfig(format!(
                "resample_ratio must be > 0, got {}",
                self.resample_ratio
            )));
        }
        Ok(())
    }
}

/// Masked per-class voxel counts. Unannotated voxels are skipped.
pub fn class_frequencies(grids: &[&[u8]], masks: &[&VoxelMask]) -> Result<[u64; NUM_CLASSES], LossError> {
    if grids.len() != masks.len() {
        return Err(LossError::ShapeMismatch(format!(
            "{} label grids, {} masks",
            grids.len(),
            masks.len()
        )));
    }
    let mut counts = [0u64; NUM_CLASSES];
    for (g, m) in grids.iter().zip(masks) {
        if g.len() != m.len() {
            return Err(LossError::ShapeMismatch(format!(
                "grid of {} voxels, mask of {}",
                g.len(),
                m.len()
            )));
        }
        for (i, &l) in g.iter().enumerate() {
            if l == IGNORE_LABEL || !m.includes(i) {
                continue;
            }
            if l as usize >= NUM_CLASSES {
                return Err(LossError::LabelOutOfRange(l));
            }
            counts[l as usize] += 1;
        }
    }
    Ok(counts)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// K-means class re-weighting. `k` is capped at the number of present classes.
pub fn reweight_classes(freqs: &[u64; NUM_CLASSES], k: usize, seed: u64) -> Result<ClassWeights, LossError> {
    if k == 0 {
        return Err(LossError::InvalidK { k, n: 0 });
    }
    // Clustering runs on sorted values so the result cannot depend on class order.
    let mut present: Vec<usize> = (0..NUM_CLASSES).filter(|&c| freqs[c] > 0).collect();
    if present.is_empty() {
        return Err(LossError::AllZeroFrequencies);
    }
    present.sort_by_key(|&c| freqs[c]);
    let logs: Vec<f64> = present.iter().map(|&c| (freqs[c] as f64).ln()).collect();
    let km = kmeans_1d(&logs, k.min(present.len()), 100, seed)?;
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); km.centroids.len()];
    for (i, &c) in present.iter().enumerate() {
        members[km.assignments[i]].push(freqs[c] as f64);
    }
    let inv_median: Vec<f64> = members
        .iter()
        .map(|m| if m.is_empty() { 0.0 } else { 1.0 / median(m) })
        .collect();
    let raw: Vec<f64> = (0..present.len()).map(|i| inv_median[km.assignments[i]]).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let mut weights = [1.0; NUM_CLASSES];
    for (i, &c) in present.iter().enumerate() {
        weights[c] = (raw[i] / mean).clamp(WEIGHT_MIN, WEIGHT_MAX);
    }
    ClassWeights::new(weights)
}

/// All occupied voxels plus a seeded sample of `ratio ×` as many empty ones,
/// restricted to annotated voxels inside the frustum.
pub fn resample_mask(
    labels: &[u8],
    visibility: &VisibilityGrid,
    ratio: f64,
    seed: u64,
) -> Result<VoxelMask, LossError> {
    check_aligned(labels, visibility)?;
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(LossError::InvalidConfig(format!(
            "resample ratio must be > 0, got {ratio}"
        )));
    }
    let mut include = vec![false; labels.len()];
    let mut empties = Vec::new();
    let mut occupied = 0usize;
    for (i, (&l, s)) in labels.iter().zip(&visibility.states).enumerate() {
        if l == IGNORE_LABEL || !s.in_frustum() {
            continue;
        }
        if l == 0 {
            empties.push(i);
        } else {
            include[i] = true;
            occupied += 1;
        }
    }
    let quota = ((ratio * occupied as f64).round() as usize).min(empties.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for j in sample(&mut rng, empties.len(), quota) {
        include[empties[j]] = true;
    }
    Ok(VoxelMask { include })
}

/// `λ · l_ss + l_ssc`.
pub fn combined_loss(l_ss: &Tensor, l_ssc: &Tensor, lambda: f64) -> Result<Tensor, LossError> {
    for v in [l_ss.item(), l_ssc.item(), lambda] {
        if !v.is_finite() {
            return Err(LossError::NonFinite(v));
        }
    }
    Ok(l_ss.mul_scalar(lambda).add(l_ssc)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GridSpec, VisibilityState};

    fn vis(states: Vec<VisibilityState>) -> VisibilityGrid {
        let spec = GridSpec::new([states.len(), 1, 1], [0.0; 3], 0.1, 0.1).unwrap();
        VisibilityGrid { spec, states }
    }

    #[test]
    fn frequencies_count_masked_voxels() {
        let g = vec![0u8; 10];
        let m = VoxelMask::all(10);
        let f = class_frequencies(&[&g], &[&m]).unwrap();
        assert_eq!(f[0], 10);
        assert_eq!(f[1..].iter().sum::<u64>(), 0);
        let bad = vec![12u8];
        assert!(matches!(
            class_frequencies(&[&bad], &[&VoxelMask::all(1)]),
            Err(LossError::LabelOutOfRange(12))
        ));
    }

    #[test]
    fn uniform_and_single_cluster_weights() {
        let w = reweight_classes(&[500; NUM_CLASSES], 3, 0).unwrap();
        assert!(w.as_array().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let mut f = [0u64; NUM_CLASSES];
        f[..5].copy_from_slice(&[10, 200, 3000, 40, 5]);
        let w = reweight_classes(&f, 1, 0).unwrap();
        assert!(w.as_array().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(matches!(
            reweight_classes(&[0; NUM_CLASSES], 2, 0),
            Err(LossError::AllZeroFrequencies)
        ));
    }

    #[test]
    fn rare_group_gets_hundredfold_weight() {
        let mut f = [0u64; NUM_CLASSES];
        f[1] = 100;
        f[2] = 100;
        f[3] = 10000;
        f[4] = 10000;
        let w = reweight_classes(&f, 2, 7).unwrap();
        // raw weights 1/100 and 1/10000, mean 0.00505
        assert!((w.get(1) - 0.01 / 0.00505).abs() < 1e-9);
        assert!((w.get(3) - 0.0001 / 0.00505).abs() < 1e-9);
        assert!((w.get(1) / w.get(3) - 100.0).abs() < 1e-9);
        assert_eq!(w.get(0), 1.0);
    }

    #[test]
    fn weights_text_round_trip() {
        let mut a = [1.0; NUM_CLASSES];
        a[4] = 0.123456789;
        let w = ClassWeights::new(a).unwrap();
        assert_eq!(ClassWeights::from_text(&w.to_text()).unwrap(), w);
        assert!(ClassWeights::from_text("0 1\n").is_err());
    }

    #[test]
    fn resample_quota() {
        let mut labels = vec![1u8; 100];
        labels.extend(vec![0u8; 1000]);
        let v = vis(vec![VisibilityState::Occluded; 1100]);
        let m = resample_mask(&labels, &v, 2.0, 3).unwrap();
        assert_eq!(m.count(), 300);
        assert_eq!(m.as_slice()[..100].iter().filter(|b| **b).count(), 100);
        assert_eq!(m, resample_mask(&labels, &v, 2.0, 3).unwrap());

        let mut labels = vec![1u8; 100];
        labels.extend(vec![0u8; 50]);
        let v = vis(vec![VisibilityState::Occluded; 150]);
        assert_eq!(resample_mask(&labels, &v, 2.0, 3).unwrap().count(), 150);
    }

    #[test]
    fn resample_skips_outside_frustum() {
        let labels = vec![1u8, 0, 0, 2];
        let v = vis(vec![
            VisibilityState::OutsideFrustum,
            VisibilityState::OutsideFrustum,
            VisibilityState::VisibleEmpty,
            VisibilityState::Surface,
        ]);
        let m = resample_mask(&labels, &v, 5.0, 0).unwrap();
        assert_eq!(m.as_slice(), &[false, false, true, true]);
    }

    #[test]
    fn combined_arithmetic() {
        let a = Tensor::scalar(0.7);
        let b = Tensor::scalar(1.3);
        assert_eq!(combined_loss(&a, &b, 0.0).unwrap().item(), 1.3);
        assert!((combined_loss(&a, &b, 1.0).unwrap().item() - 2.0).abs() < 1e-15);
        let c = combined_loss(&Tensor::scalar(2.0), &Tensor::scalar(1.0), 0.5).unwrap();
        assert_eq!(c.item(), 2.0);
        assert!(matches!(
            combined_loss(&Tensor::scalar(f64::NAN), &b, 1.0),
            Err(LossError::NonFinite(_))
        ));
    }

    #[test]
    fn uniform_logits_give_log12() {
        let logits = Tensor::zeros(&[1, NUM_CLASSES, 3]);
        for s in [0.0, 0.1, 0.5] {
            let l = smooth_ce(&logits, &[0, 5, 11], s, &[false; 3]).unwrap();
            assert!((l.item() - (NUM_CLASSES as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_ce_two_voxel_hand_value() {
        let mut x = vec![0.0; NUM_CLASSES * 2];
        // voxel 0: class 0 logit 2 ; voxel 1: class 3 logit -1
        x[0] = 2.0;
        x[3 * 2 + 1] = -1.0;
        let logits = Tensor::new(&[1, NUM_CLASSES, 2], x);
        let mut w = [1.0; NUM_CLASSES];
        w[0] = 2.0;
        w[3] = 0.5;
        let l = weighted_ce(&logits, &[0, 3], &ClassWeights::new(w).unwrap(), &VoxelMask::all(2)).unwrap();
        let nll0 = -(2.0f64.exp() / (2.0f64.exp() + 11.0)).ln();
        let nll1 = -((-1.0f64).exp() / ((-1.0f64).exp() + 11.0)).ln();
        let expected = (2.0 * nll0 + 0.5 * nll1) / 2.5;
        assert!((l.item() - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let logits = Tensor::zeros(&[1, NUM_CLASSES, 2]);
        let m = VoxelMask::new(vec![false, false]);
        assert!(matches!(
            weighted_ce(&logits, &[0, 1], &ClassWeights::uniform(), &m),
            Err(LossError::EmptyMask)
        ));
    }
}
