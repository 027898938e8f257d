//! Dual-head network: 2D semantic head, feature projection, fusion, and a
//! 3D encoder-decoder that predicts at a quarter of the input resolution.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{resample_volume, scatter_mean, CheckpointEntry, Mode, Parameter, ResampleMode, Tensor};
use crate::geometry::{RgbImage, VoxelGrid};
use crate::losses::NUM_CLASSES;

use super::layers::{BatchNormLayer, Conv3dLayer, HasParams, ParamSet};
use super::pcr::{PcrBlock, PcrBlockConfig};
use super::residual::{BlockVariant, ResidualBlock, ResidualBlockConfig};
use super::semantic::{SemanticHead, SemanticProvider};
use super::BlocksError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionStrategy {
    /// Added to the full-resolution stream before the encoder.
    Early,
    /// Added at the bottleneck, before its residual blocks.
    Mid,
    /// Added to the quarter-resolution decoder output.
    Late,
}

impl std::str::FromStr for FusionStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "early" => Ok(FusionStrategy::Early),
            "mid" => Ok(FusionStrategy::Mid),
            "late" => Ok(FusionStrategy::Late),
            _ => Err(format!("unknown fusion strategy `{s}` (expected early, mid or late)")),
        }
    }
}

impl std::fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionStrategy::Early => "early",
            FusionStrategy::Mid => "mid",
            FusionStrategy::Late => "late",
        })
    }
}

/// Architecture description. Keys mirror the `[model]` table of a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MdbNetConfig {
    pub grid_dims: [usize; 3],
    pub num_classes: usize,
    pub fusion: FusionStrategy,
    /// Block variant for every stage unless `stage_blocks` is given.
    pub block: BlockVariant,
    /// Per-stage variants: encoder 1, encoder 2, bottleneck, decoder.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage_blocks: Option<Vec<BlockVariant>>,
    /// Channel widths at full, half and quarter (and coarser) resolution.
    pub widths: [usize; 3],
    /// Stride-2 steps from the quarter-resolution stage to the bottleneck.
    pub bottleneck_downsamples: usize,
    pub bottleneck_blocks: usize,
    /// Feature channels of the 2D semantic head.
    pub head_channels: usize,
    pub scale_factor: usize,
    /// Directory of precomputed feature maps; the trainable head is used when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_dir: Option<PathBuf>,
}

impl Default for MdbNetConfig {
    fn default() -> Self {
        MdbNetConfig {
            grid_dims: [24, 16, 24],
            num_classes: NUM_CLASSES,
            fusion: FusionStrategy::Late,
            block: BlockVariant::Itrm,
            stage_blocks: None,
            widths: [16, 32, 64],
            bottleneck_downsamples: 1,
            bottleneck_blocks: 2,
            head_channels: 16,
            scale_factor: 4,
            feature_dir: None,
        }
    }
}

impl MdbNetConfig {
    pub fn validate(&self) -> Result<(), BlocksError> {
        let bad = |m: String| Err(BlocksError::InvalidConfig(m));
        if self.num_classes != NUM_CLASSES {
            return bad(format!("num_classes must be {NUM_CLASSES}, got {}", self.num_classes));
        }
        if self.scale_factor != 4 {
            return bad(format!("scale_factor is fixed at 4, got {}", self.scale_factor));
        }
        if self.widths.contains(&0) || self.head_channels == 0 {
            return bad("channel widths must be positive".into());
        }
        if self.bottleneck_downsamples == 0 || self.bottleneck_blocks == 0 {
            return bad("bottleneck needs at least one downsample and one block".into());
        }
        let div = 4usize << self.bottleneck_downsamples;
        if self.grid_dims.iter().any(|d| *d == 0 || d % div != 0) {
            return bad(format!("grid dims {:?} must be divisible by {div}", self.grid_dims));
        }
        if let Some(s) = &self.stage_blocks {
            if s.len() != 4 {
                return bad(format!("stage_blocks needs 4 entries, got {}", s.len()));
            }
        }
        if self.fusion == FusionStrategy::Early && self.head_channels != self.widths[0] {
            return bad(format!(
                "early fusion adds {} feature channels to a {}-channel stream",
                self.head_channels, self.widths[0]
            ));
        }
        Ok(())
    }

    pub fn stage_variant(&self, stage: usize) -> BlockVariant {
        self.stage_blocks.as_ref().map_or(self.block, |s| s[stage])
    }

    pub fn output_dims(&self) -> [usize; 3] {
        self.grid_dims.map(|d| d / self.scale_factor)
    }

    /// Number of stride-2 PCR stages that bring full-resolution features to
    /// the fusion point.
    pub fn pcr_stages(&self) -> usize {
        match self.fusion {
            FusionStrategy::Early => 0,
            FusionStrategy::Late => 2,
            FusionStrategy::Mid => 2 + self.bottleneck_downsamples,
        }
    }
}

/// A batch prepared for the network.
#[derive(Debug, Clone)]
pub struct ModelInput {
    /// N×1×D×H×W F-TSDF.
    pub ftsdf: Tensor,
    /// N×3×1×H×W image.
    pub rgb: Tensor,
    /// Per sample, the flat voxel each pixel lands in.
    pub pixel_targets: Vec<Vec<Option<usize>>>,
    pub ids: Vec<String>,
}

impl ModelInput {
    pub fn new(
        ftsdf: &[&VoxelGrid<f32>],
        rgb: &[&RgbImage],
        pixel_targets: Vec<Vec<Option<usize>>>,
        ids: Vec<String>,
    ) -> Result<Self, BlocksError> {
        let n = ftsdf.len();
        if n == 0 || rgb.len() != n || pixel_targets.len() != n || ids.len() != n {
            return Err(BlocksError::ShapeMismatch(
                "batch parts disagree in length or are empty".into(),
            ));
        }
        let dims = ftsdf[0].spec.dims;
        let (w, h) = (rgb[0].width, rgb[0].height);
        let mut f = Vec::with_capacity(n * ftsdf[0].values.len());
        let mut c = Vec::with_capacity(n * 3 * w * h);
        for i in 0..n {
            if ftsdf[i].spec.dims != dims || ftsdf[i].channels != 1 || rgb[i].width != w || rgb[i].height != h {
                return Err(BlocksError::ShapeMismatch(format!(
                    "sample {i} differs in size from sample 0"
                )));
            }
            if pixel_targets[i].len() != w * h {
                return Err(BlocksError::ShapeMismatch(format!(
                    "sample {i}: pixel targets do not cover the image"
                )));
            }
            f.extend(ftsdf[i].values.iter().map(|&v| v as f64));
            c.extend_from_slice(&rgb[i].values);
        }
        Ok(ModelInput {
            ftsdf: Tensor::new(&[n, 1, dims[0], dims[1], dims[2]], f),
            rgb: Tensor::new(&[n, 3, 1, h, w], c),
            pixel_targets,
            ids,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.ids.len()
    }
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// N×12×(D/4)×(H/4)×(W/4).
    pub logits3d: Tensor,
    /// N×12×1×H×W.
    pub logits2d: Tensor,
}

/// One downsampling step of the 3D branch with its residual blocks.
#[derive(Debug, Clone)]
struct Stage {
    down: Conv3dLayer,
    blocks: Vec<ResidualBlock>,
}

impl Stage {
    fn collect(&self, out: &mut ParamSet) {
        self.down.collect(out);
        for b in &self.blocks {
            b.collect(out);
        }
    }
}

#[derive(Debug, Clone)]
struct DecoderStage {
    conv: Conv3dLayer,
    block: ResidualBlock,
}

#[derive(Debug, Clone)]
pub struct MdbNet {
    pub config: MdbNetConfig,
    semantic: SemanticProvider,
    stem: Conv3dLayer,
    /// Half and quarter resolution.
    encoder: [Stage; 2],
    /// Coarser levels; the last is the bottleneck.
    levels: Vec<Stage>,
    /// One per level, applied deepest first.
    decoder: Vec<DecoderStage>,
    pcr: Vec<PcrBlock>,
    head_bn: BatchNormLayer,
    head_conv: Conv3dLayer,
}

/// Adds projected features to the stream after passing them through the
/// PCR chain (empty for early fusion).
pub fn fuse(
    stream: &Tensor,
    projected: &Tensor,
    strategy: FusionStrategy,
    pcr: &[PcrBlock],
) -> Result<Tensor, BlocksError> {
    if strategy == FusionStrategy::Early && !pcr.is_empty() {
        return Err(BlocksError::InvalidConfig("early fusion takes no PCR stages".into()));
    }
    let mut f = projected.clone();
    for b in pcr {
        f = b.forward(&f)?;
    }
    if f.shape() != stream.shape() {
        return Err(BlocksError::ShapeMismatch(format!(
            "{strategy} fusion: features reach {:?}, stream is {:?}",
            f.shape(),
            stream.shape()
        )));
    }
    Ok(stream.add(&f)?)
}

/// [`fuse`] for a single-sample feature grid.
pub fn fuse_grid(
    stream: &Tensor,
    projected: &VoxelGrid<f32>,
    strategy: FusionStrategy,
    pcr: &[PcrBlock],
) -> Result<Tensor, BlocksError> {
    let [x, y, z] = projected.spec.dims;
    let t = Tensor::new(
        &[1, projected.channels, x, y, z],
        projected.values.iter().map(|&v| v as f64).collect(),
    );
    fuse(stream, &t, strategy, pcr)
}

/// Chain of stride-2 PCR blocks taking `in_channels` features to `out_channels`.
pub fn pcr_chain(name: &str, stages: usize, in_channels: usize, widths: [usize; 3], seed: u64) -> Vec<PcrBlock> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cin = in_channels;
    (0..stages)
        .map(|i| {
            let cout = widths[(i + 1).min(2)];
            let b = PcrBlock::new(
                &format!("{name}.{i}"),
                PcrBlockConfig {
                    in_channels: cin,
                    out_channels: cout,
                    stride: 2,
                },
                &mut rng,
            );
            cin = cout;
            b
        })
        .collect()
}

impl MdbNet {
    pub fn new(config: MdbNetConfig, seed: u64) -> Result<Self, BlocksError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [w0, w1, w2] = config.widths;
        let semantic = match &config.feature_dir {
            Some(d) => SemanticProvider::Files(d.clone()),
            None => SemanticProvider::Trainable(SemanticHead::new("head2d", config.head_channels, &mut rng)),
        };
        let stem = Conv3dLayer::cubic("stem", 1, w0, 3, 1, true, &mut rng);
        let block = |name: &str, c: usize, stage: usize, rng: &mut ChaCha8Rng| {
            ResidualBlock::new(name, ResidualBlockConfig::new(c, config.stage_variant(stage)), rng)
        };
        let encoder = [
            Stage {
                down: Conv3dLayer::cubic("enc1.down", w0, w1, 3, 2, true, &mut rng),
                blocks: vec![block("enc1.block", w1, 0, &mut rng)],
            },
            Stage {
                down: Conv3dLayer::cubic("enc2.down", w1, w2, 3, 2, true, &mut rng),
                blocks: vec![block("enc2.block", w2, 1, &mut rng)],
            },
        ];
        let b = config.bottleneck_downsamples;
        let levels = (0..b)
            .map(|l| {
                let count = if l + 1 == b { config.bottleneck_blocks } else { 1 };
                Stage {
                    down: Conv3dLayer::cubic(&format!("level{l}.down"), w2, w2, 3, 2, true, &mut rng),
                    blocks: (0..count)
                        .map(|i| block(&format!("level{l}.block{i}"), w2, 2, &mut rng))
                        .collect(),
                }
            })
            .collect();
        let decoder = (0..b)
            .map(|l| DecoderStage {
                conv: Conv3dLayer::cubic(&format!("dec{l}.conv"), w2, w2, 3, 1, true, &mut rng),
                block: block(&format!("dec{l}.block"), w2, 3, &mut rng),
            })
            .collect();
        let pcr = pcr_chain(
            "pcr",
            config.pcr_stages(),
            config.head_channels,
            config.widths,
            rng.random(),
        );
        Ok(MdbNet {
            semantic,
            stem,
            encoder,
            levels,
            decoder,
            pcr,
            head_bn: BatchNormLayer::new("head3d.bn", w2),
            head_conv: Conv3dLayer::new(
                "head3d.conv",
                w2,
                NUM_CLASSES,
                [1; 3],
                Default::default(),
                true,
                &mut rng,
            ),
            config,
        })
    }

    pub fn pcr_blocks(&self) -> &[PcrBlock] {
        &self.pcr
    }

    pub fn semantic_provider(&self) -> &SemanticProvider {
        &self.semantic
    }

    pub fn forward(&self, input: &ModelInput, mode: Mode) -> Result<ModelOutput, BlocksError> {
        let dims = self.config.grid_dims;
        let fs = input.ftsdf.shape();
        if fs.len() != 5 || fs[1] != 1 || fs[2..] != dims {
            return Err(BlocksError::ShapeMismatch(format!(
                "F-TSDF batch {fs:?} does not match grid {dims:?}"
            )));
        }
        let n = fs[0];
        let (features, logits2d) = self.semantic.forward(&input.rgb, &input.ids)?;
        let fsh = features.shape().to_vec();
        let flat = features.reshape(&[n, fsh[1], fsh[3] * fsh[4]])?;
        let projected = scatter_mean(&flat, &input.pixel_targets, dims)?;

        let mut x = self.stem.forward(&input.ftsdf)?;
        if self.config.fusion == FusionStrategy::Early {
            x = fuse(&x, &projected, FusionStrategy::Early, &[])?;
        }
        for stage in &self.encoder {
            x = stage.down.forward(&x)?;
            for b in &stage.blocks {
                x = b.forward(&x, mode)?;
            }
        }
        let mut skips = vec![x.clone()];
        for (l, stage) in self.levels.iter().enumerate() {
            x = stage.down.forward(&x)?;
            if l + 1 == self.levels.len() {
                if self.config.fusion == FusionStrategy::Mid {
                    x = fuse(&x, &projected, FusionStrategy::Mid, &self.pcr)?;
                }
            }
            for b in &stage.blocks {
                x = b.forward(&x, mode)?;
            }
            if l + 1 < self.levels.len() {
                skips.push(x.clone());
            }
        }
        for (stage, skip) in self.decoder.iter().zip(skips.iter().rev()) {
            let s = skip.shape();
            x = resample_volume(&x, [s[2], s[3], s[4]], ResampleMode::Trilinear)?;
            x = stage.conv.forward(&x)?.add(skip)?;
            x = stage.block.forward(&x, mode)?;
        }
        if self.config.fusion == FusionStrategy::Late {
            x = fuse(&x, &projected, FusionStrategy::Late, &self.pcr)?;
        }
        let h = self.head_bn.forward(&x, mode)?.relu();
        let logits3d = self.head_conv.forward(&h)?;
        Ok(ModelOutput { logits3d, logits2d })
    }

    /// Parameters of the 3D branch (including PCR blocks) and of the 2D head.
    pub fn parameter_groups(&self) -> (Vec<Parameter>, Vec<Parameter>) {
        let mut head = ParamSet::default();
        self.semantic.collect(&mut head);
        let mut all = ParamSet::default();
        self.collect_3d(&mut all);
        (all.params, head.params)
    }

    fn collect_3d(&self, out: &mut ParamSet) {
        self.stem.collect(out);
        for s in &self.encoder {
            s.collect(out);
        }
        for s in &self.levels {
            s.collect(out);
        }
        for d in &self.decoder {
            d.conv.collect(out);
            d.block.collect(out);
        }
        for p in &self.pcr {
            p.collect(out);
        }
        self.head_bn.collect(out);
        self.head_conv.collect(out);
    }

    /// Parameters and running statistics as checkpoint entries.
    pub fn state_entries(&self) -> Vec<CheckpointEntry> {
        let set = self.param_set();
        let mut out: Vec<CheckpointEntry> = set
            .params
            .iter()
            .map(|p| CheckpointEntry::from_f64(p.name.clone(), p.tensor.shape(), &p.tensor.data()))
            .collect();
        for (name, s) in &set.stats {
            let c = s.channels();
            out.push(CheckpointEntry::from_f64(
                format!("{name}.running_mean"),
                &[c],
                &s.mean(),
            ));
            out.push(CheckpointEntry::from_f64(format!("{name}.running_var"), &[c], &s.var()));
        }
        out
    }

    /// Restores every parameter and running statistic from `entries`.
    pub fn load_state(&self, entries: &[CheckpointEntry]) -> Result<(), BlocksError> {
        let find = |name: &str, shape: &[usize]| -> Result<Vec<f64>, BlocksError> {
            let e = entries
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| BlocksError::MissingParameter(name.to_string()))?;
            if e.shape != shape {
                return Err(BlocksError::ShapeMismatch(format!(
                    "{name}: checkpoint {:?}, model {shape:?}",
                    e.shape
                )));
            }
            Ok(e.to_f64())
        };
        let set = self.param_set();
        for p in &set.params {
            let v = find(&p.name, p.tensor.shape())?;
            p.tensor.data_mut().copy_from_slice(&v);
        }
        for (name, s) in &set.stats {
            let c = s.channels();
            s.set(
                find(&format!("{name}.running_mean"), &[c])?,
                find(&format!("{name}.running_var"), &[c])?,
            );
        }
        Ok(())
    }
}

impl HasParams for MdbNet {
    fn collect(&self, out: &mut ParamSet) {
        self.semantic.collect(out);
        self.collect_3d(out);
    }
}

/// Single-sample convenience wrapper around [`MdbNet::forward`].
pub fn mdbnet_forward(model: &MdbNet, input: &ModelInput, mode: Mode) -> Result<ModelOutput, BlocksError> {
    model.forward(input, mode)
}
