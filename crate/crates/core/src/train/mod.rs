//! Training loop, evaluation, the per-voxel logistic baseline and K-fold
//! cross-validation.

mod baseline;
mod cv;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    no_grad, AutodiffError, Checkpoint, CheckpointEntry, LrSchedule, Mode, OptimizerKind, OptimizerState, Tensor,
};
use crate::blocks::{BlocksError, MdbNet, MdbNetConfig, ModelInput};
use crate::data::{downsample_labels, early_stop, DataError, Sample, StopDecision, TrainState};
use crate::geometry::{classify_voxels, pixel_voxel_targets, GeometryError, RgbImage, VisibilityGrid, VoxelGrid};
use crate::losses::{
    class_frequencies, combined_loss, resample_mask, reweight_classes, smooth_ce, weighted_ce, ClassWeights,
    CombinedLossConfig, LossError, VoxelMask, WeightingMode, IGNORE_LABEL, NUM_CLASSES,
};
use crate::metrics::{sc_counts, sc_region, ssc_region, ConfusionMatrix, EvalReport, MetricsError, ScCounts};

pub use baseline::{feature_count, train_logistic_baseline, voxel_features, BaselineConfig, LogisticBaseline};
pub use cv::{rare_class_miou, run_cross_validation, CvResult};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged: loss {0} at step {1}")]
    Diverged(f64, usize),
    #[error(transparent)]
    Blocks(#[from] BlocksError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Both learning-rate schedules span this many epochs.
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Peak one-cycle learning rate of the 3D branch (SGD, momentum 0.9).
    pub lr_3d: f64,
    /// Initial cosine-decayed learning rate of the 2D head (AdamW).
    pub lr_head: f64,
    pub weight_decay_3d: f64,
    pub weight_decay_head: f64,
    /// Stop after this many optimizer steps even if epochs remain.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    /// Taken from the run's top-level seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 20,
            batch_size: 2,
            patience: 15,
            lr_3d: 0.01,
            lr_head: 2e-3,
            weight_decay_3d: 5e-4,
            weight_decay_head: 0.05,
            max_steps: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return bad("max_epochs, batch_size and patience must be ≥ 1");
        }
        if !(self.lr_3d > 0.0 && self.lr_head > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.weight_decay_3d >= 0.0 && self.weight_decay_head >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be ≥ 1");
        }
        Ok(())
    }
}

/// A sample with everything the training loop needs precomputed.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub id: String,
    pub ftsdf: VoxelGrid<f32>,
    pub rgb: RgbImage,
    pub pixel_targets: Vec<Option<usize>>,
    pub pixel_labels: Vec<u8>,
    /// Ground truth at output resolution.
    pub labels: Vec<u8>,
    /// Visibility at output resolution.
    pub visibility: VisibilityGrid,
    /// In-frustum annotated output voxels.
    pub frustum: VoxelMask,
}

impl PreparedSample {
    pub fn new(sample: &Sample, scale_factor: usize) -> Result<Self, TrainError> {
        let spec = sample.spec();
        let vis = classify_voxels(&sample.camera, &sample.depth, &spec)?.downsample(scale_factor)?;
        let labels = downsample_labels(&sample.gt_labels, scale_factor)?.values;
        let frustum = VoxelMask::frustum(&labels, &vis)?;
        Ok(PreparedSample {
            id: sample.id.clone(),
            ftsdf: sample.ftsdf.clone(),
            rgb: sample.rgb.clone(),
            pixel_targets: pixel_voxel_targets(&sample.camera, &sample.depth, &spec)?,
            pixel_labels: sample.pixel_labels(),
            labels,
            visibility: vis,
            frustum,
        })
    }
}

pub fn prepare_samples(samples: &[Sample], scale_factor: usize) -> Result<Vec<PreparedSample>, TrainError> {
    samples.iter().map(|s| PreparedSample::new(s, scale_factor)).collect()
}

pub fn model_input(batch: &[&PreparedSample]) -> Result<ModelInput, TrainError> {
    Ok(ModelInput::new(
        &batch.iter().map(|s| &s.ftsdf).collect::<Vec<_>>(),
        &batch.iter().map(|s| &s.rgb).collect::<Vec<_>>(),
        batch.iter().map(|s| s.pixel_targets.clone()).collect(),
        batch.iter().map(|s| s.id.clone()).collect(),
    )?)
}

/// Class weights for the training loss: K-means re-weighting of the
/// in-frustum output-voxel frequencies, or uniform under resampling.
pub fn training_weights(
    samples: &[&PreparedSample],
    loss: &CombinedLossConfig,
    seed: u64,
) -> Result<ClassWeights, TrainError> {
    match loss.weighting_mode {
        WeightingMode::Resample => Ok(ClassWeights::uniform()),
        WeightingMode::KMeansReweight => {
            let grids: Vec<&[u8]> = samples.iter().map(|s| s.labels.as_slice()).collect();
            let masks: Vec<&VoxelMask> = samples.iter().map(|s| &s.frustum).collect();
            let freqs = class_frequencies(&grids, &masks)?;
            Ok(reweight_classes(&freqs, loss.kmeans_k, seed)?)
        }
    }
}

/// Argmax class of every output voxel, one vector per sample.
pub fn predict(model: &MdbNet, samples: &[&PreparedSample], batch_size: usize) -> Result<Vec<Vec<u8>>, TrainError> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let logits = no_grad(|| {
            model
                .forward(&model_input(chunk)?, Mode::Eval)
                .map_err(TrainError::from)
        })?
        .logits3d;
        out.extend(argmax_classes(&logits));
    }
    Ok(out)
}

/// Per-sample argmax over the class axis of an N×12×… tensor.
pub fn argmax_classes(logits: &Tensor) -> Vec<Vec<u8>> {
    let s = logits.shape();
    let (n, c) = (s[0], s[1]);
    let p: usize = s[2..].iter().product();
    let data = logits.data();
    (0..n)
        .map(|b| {
            (0..p)
                .map(|v| {
                    let mut best = 0;
                    for k in 1..c {
                        if data[(b * c + k) * p + v] > data[(b * c + best) * p + v] {
                            best = k;
                        }
                    }
                    best as u8
                })
                .collect()
        })
        .collect()
}

/// SC and SSC metrics of predictions against prepared ground truth. The SC
/// empty sample of sample `i` is drawn with seed `i`.
pub fn evaluate_predictions(
    fold_id: usize,
    preds: &[Vec<u8>],
    samples: &[&PreparedSample],
) -> Result<EvalReport, TrainError> {
    let mut sc = ScCounts::default();
    let mut cm = ConfusionMatrix::new();
    for (i, (pred, s)) in preds.iter().zip(samples).enumerate() {
        let region = sc_region(&s.labels, &s.visibility, 1.0, i as u64)?;
        sc.merge(&sc_counts(pred, &s.labels, &region)?);
        cm.accumulate(pred, &s.labels, &ssc_region(&s.labels, &s.visibility)?)?;
    }
    Ok(EvalReport::from_counts(fold_id, &sc, &cm))
}

pub fn evaluate(
    model: &MdbNet,
    samples: &[&PreparedSample],
    fold_id: usize,
    batch_size: usize,
) -> Result<EvalReport, TrainError> {
    let preds = predict(model, samples, batch_size)?;
    evaluate_predictions(fold_id, &preds, samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_miou: f64,
    pub val_sc_iou: f64,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold_id: usize,
    /// Combined loss of every optimizer step.
    pub step_losses: Vec<f64>,
    pub epochs: Vec<EpochLog>,
    /// Validation report of the best epoch's checkpointed parameters.
    pub report: EvalReport,
    /// Parameters of the best epoch, with the optimizer state of that moment.
    pub checkpoint: Checkpoint,
    pub state: TrainState,
    pub weights: ClassWeights,
}

impl FoldResult {
    pub fn log_text(&self) -> String {
        let mut s = String::from("epoch,mean_loss,val_miou,val_sc_iou\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{:.6},{:.4},{:.4}\n",
                e.epoch, e.mean_loss, e.val_miou, e.val_sc_iou
            ));
        }
        s
    }
}

fn optimizer_entries(prefix: &str, opt: &OptimizerState) -> Vec<CheckpointEntry> {
    opt.buffers()
        .into_iter()
        .map(|(name, shape, values)| CheckpointEntry::from_f64(format!("{prefix}.{name}"), &shape, &values))
        .collect()
}

fn batch_mask(batch: &[&PreparedSample], loss: &CombinedLossConfig, seed: u64) -> Result<VoxelMask, TrainError> {
    let masks = batch
        .iter()
        .enumerate()
        .map(|(i, s)| match loss.weighting_mode {
            WeightingMode::KMeansReweight => Ok(s.frustum.clone()),
            WeightingMode::Resample => resample_mask(
                &s.labels,
                &s.visibility,
                loss.resample_ratio,
                seed.wrapping_add(i as u64),
            ),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(VoxelMask::concat(&masks))
}

/// Trains one model on `train` with early stopping on `val` SSC mIoU.
pub fn train_fold(
    model_cfg: &MdbNetConfig,
    loss_cfg: &CombinedLossConfig,
    cfg: &TrainConfig,
    train: &[&PreparedSample],
    val: &[&PreparedSample],
    fold_id: usize,
) -> Result<FoldResult, TrainError> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::InvalidConfig(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let fold_seed = cfg.seed.wrapping_mul(1000).wrapping_add(fold_id as u64);
    let model = MdbNet::new(model_cfg.clone(), fold_seed)?;
    let weights = training_weights(train, loss_cfg, fold_seed)?;

    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total = cfg.max_steps.map_or(cfg.max_epochs * steps_per_epoch, |m| {
        m.min(cfg.max_epochs * steps_per_epoch)
    });
    let (p3d, p2d) = model.parameter_groups();
    let mut opt3d = OptimizerState::new(
        OptimizerKind::SgdMomentum {
            momentum: 0.9,
            weight_decay: cfg.weight_decay_3d,
        },
        p3d,
    );
    let mut opt2d = OptimizerState::new(
        OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: cfg.weight_decay_head,
        },
        p2d,
    );
    let sched3d = LrSchedule::one_cycle(cfg.lr_3d, total);
    let sched2d = LrSchedule::cosine_decay(cfg.lr_head, total);

    let mut state = TrainState::new(cfg.seed, fold_id);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step_losses = Vec::with_capacity(total);
    let mut epochs = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut step = 0usize;
    'epochs: for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(fold_seed ^ ((epoch as u64 + 1) << 32)));
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if step >= total {
                break;
            }
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| train[i]).collect();
            let out = model.forward(&model_input(&batch)?, Mode::Train)?;
            let labels: Vec<u8> = batch.iter().flat_map(|s| s.labels.iter().copied()).collect();
            let mask = batch_mask(&batch, loss_cfg, fold_seed.wrapping_add((step as u64) << 16))?;
            let l_ssc = weighted_ce(&out.logits3d, &labels, &weights, &mask)?;
            let pix: Vec<u8> = batch.iter().flat_map(|s| s.pixel_labels.iter().copied()).collect();
            let ignore: Vec<bool> = pix
                .iter()
                .map(|&l| l == IGNORE_LABEL || l as usize >= NUM_CLASSES)
                .collect();
            let l_ss = smooth_ce(&out.logits2d, &pix, loss_cfg.smoothing, &ignore)?;
            let loss = combined_loss(&l_ss, &l_ssc, loss_cfg.lambda)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(TrainError::Diverged(value, step));
            }
            opt3d.zero_grad();
            opt2d.zero_grad();
            loss.backward()?;
            opt3d.step_scheduled(&sched3d, step)?;
            if !opt2d.params().is_empty() {
                opt2d.step_scheduled(&sched2d, step)?;
            }
            step_losses.push(value);
            sum += value;
            count += 1;
            step += 1;
        }
        if count == 0 {
            break;
        }
        let report = evaluate(&model, val, fold_id, cfg.batch_size)?;
        epochs.push(EpochLog {
            epoch,
            mean_loss: sum / count as f64,
            val_miou: report.ssc_miou,
            val_sc_iou: report.sc_iou,
        });
        let before = state.best_miou;
        let decision = early_stop(&mut state, report.ssc_miou, cfg.patience);
        if state.best_miou > before {
            let mut optimizer = optimizer_entries("opt3d", &opt3d);
            optimizer.extend(optimizer_entries("opt2d", &opt2d));
            best = Some(Checkpoint {
                params: model.state_entries(),
                optimizer,
            });
        }
        if decision == StopDecision::Stop || step >= total {
            break 'epochs;
        }
    }
    let checkpoint = best.expect("at least one epoch ran");
    // Report what the stored (f32) parameters score, so re-evaluating the
    // checkpoint later reproduces it exactly.
    let stored = MdbNet::new(model_cfg.clone(), fold_seed)?;
    stored.load_state(&checkpoint.params)?;
    let report = evaluate(&stored, val, fold_id, cfg.batch_size)?;
    Ok(FoldResult {
        fold_id,
        step_losses,
        epochs,
        report,
        checkpoint,
        state,
        weights,
    })
}
