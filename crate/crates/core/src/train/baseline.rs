//! Multinomial logistic regression applied independently to every output
//! voxel, on the same inputs the network sees.
//!
//! Features of an output voxel: the F-TSDF values of the `f³` input voxels it
//! covers, the mean colour of the pixels that project into it, and a flag for
//! whether any pixel does.

use serde::{Deserialize, Serialize};

use super::{argmax_classes, batch_mask, training_weights, PreparedSample, TrainError};
use crate::autodiff::{Conv3dOpts, LrSchedule, OptimizerKind, OptimizerState, Tensor};
use crate::blocks::{Conv3dLayer, HasParams};
use crate::losses::{weighted_ce, CombinedLossConfig, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            steps: 400,
            lr: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogisticBaseline {
    pub scale_factor: usize,
    layer: Conv3dLayer,
}

pub fn feature_count(scale_factor: usize) -> usize {
    scale_factor.pow(3) + 4
}

/// Per-voxel features of one sample as an F×D'×H'×W' block.
pub fn voxel_features(s: &PreparedSample, f: usize) -> Vec<f64> {
    let spec = s.ftsdf.spec;
    let [dx, dy, dz] = spec.dims.map(|d| d / f);
    let cells = dx * dy * dz;
    let nf = feature_count(f);
    let mut out = vec![0.0; nf * cells];
    for x in 0..dx {
        for y in 0..dy {
            for z in 0..dz {
                let c = (x * dy + y) * dz + z;
                let mut k = 0;
                for ox in 0..f {
                    for oy in 0..f {
                        for oz in 0..f {
                            out[k * cells + c] = s.ftsdf.get(0, x * f + ox, y * f + oy, z * f + oz) as f64;
                            k += 1;
                        }
                    }
                }
            }
        }
    }
    let plane = s.rgb.width * s.rgb.height;
    let mut sums = vec![[0.0; 3]; cells];
    let mut counts = vec![0usize; cells];
    for (p, t) in s.pixel_targets.iter().enumerate() {
        if let Some(v) = t {
            let [x, y, z] = spec.coords(*v);
            let c = ((x / f) * dy + y / f) * dz + z / f;
            for ch in 0..3 {
                sums[c][ch] += s.rgb.values[ch * plane + p];
            }
            counts[c] += 1;
        }
    }
    let base = f.pow(3);
    for c in 0..cells {
        if counts[c] > 0 {
            for ch in 0..3 {
                out[(base + ch) * cells + c] = sums[c][ch] / counts[c] as f64;
            }
            out[(base + 3) * cells + c] = 1.0;
        }
    }
    out
}

fn batch_tensor(samples: &[&PreparedSample], f: usize) -> Tensor {
    let dims = samples[0].ftsdf.spec.dims.map(|d| d / f);
    let mut data = Vec::new();
    for s in samples {
        data.extend(voxel_features(s, f));
    }
    Tensor::new(&[samples.len(), feature_count(f), dims[0], dims[1], dims[2]], data)
}

impl LogisticBaseline {
    pub fn predict(&self, samples: &[&PreparedSample]) -> Result<Vec<Vec<u8>>, TrainError> {
        let mut out = Vec::new();
        for chunk in samples.chunks(16) {
            let logits = crate::autodiff::no_grad(|| self.layer.forward(&batch_tensor(chunk, self.scale_factor)))?;
            out.extend(argmax_classes(&logits));
        }
        Ok(out)
    }
}

/// Full-batch AdamW on the same masked, weighted cross-entropy as the network.
pub fn train_logistic_baseline(
    train: &[&PreparedSample],
    scale_factor: usize,
    loss_cfg: &CombinedLossConfig,
    cfg: &BaselineConfig,
) -> Result<LogisticBaseline, TrainError> {
    if train.is_empty() || cfg.steps == 0 {
        return Err(TrainError::InvalidConfig(
            "baseline needs samples and at least one step".into(),
        ));
    }
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed);
    let nf = feature_count(scale_factor);
    let layer = Conv3dLayer::new(
        "logistic",
        nf,
        NUM_CLASSES,
        [1; 3],
        Conv3dOpts::new(1, 0),
        true,
        &mut rng,
    );
    layer.zero();
    let weights = training_weights(train, loss_cfg, cfg.seed)?;
    let x = batch_tensor(train, scale_factor);
    let labels: Vec<u8> = train.iter().flat_map(|s| s.labels.iter().copied()).collect();
    let mut opt = OptimizerState::new(
        OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        },
        layer.param_set().params,
    );
    let sched = LrSchedule::cosine_decay(cfg.lr, cfg.steps);
    for step in 0..cfg.steps {
        let mask = batch_mask(train, loss_cfg, cfg.seed.wrapping_add(step as u64))?;
        let loss = weighted_ce(&layer.forward(&x)?, &labels, &weights, &mask)?;
        opt.zero_grad();
        loss.backward()?;
        opt.step_scheduled(&sched, step)?;
    }
    Ok(LogisticBaseline { scale_factor, layer })
}
