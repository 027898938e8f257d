//! Full pre-activation residual block and its tanh-identity variant (ITRM).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, Tensor};

use super::layers::{BatchNormLayer, Conv3dLayer, HasParams, ParamSet};
use super::BlocksError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockVariant {
    /// `x + F(x)`.
    PreAct,
    /// `tanh(x) + F(x)`.
    Itrm,
}

impl std::str::FromStr for BlockVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "preact" => Ok(BlockVariant::PreAct),
            "itrm" => Ok(BlockVariant::Itrm),
            _ => Err(format!("unknown block variant `{s}` (expected preact or itrm)")),
        }
    }
}

impl std::fmt::Display for BlockVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BlockVariant::PreAct => "preact",
            BlockVariant::Itrm => "itrm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidualBlockConfig {
    pub channels: usize,
    pub kernel: usize,
    pub variant: BlockVariant,
}

impl ResidualBlockConfig {
    pub fn new(channels: usize, variant: BlockVariant) -> Self {
        ResidualBlockConfig {
            channels,
            kernel: 3,
            variant,
        }
    }

    /// Conv layers on the residual path.
    pub const LAYERS_PER_BLOCK: usize = 2;
}

/// BN → ReLU → conv → BN → ReLU → conv on the residual path. The first conv
/// has no bias since a batch norm follows it.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub config: ResidualBlockConfig,
    pub bn1: BatchNormLayer,
    pub conv1: Conv3dLayer,
    pub bn2: BatchNormLayer,
    pub conv2: Conv3dLayer,
}

impl ResidualBlock {
    pub fn new<R: Rng>(name: &str, config: ResidualBlockConfig, rng: &mut R) -> Self {
        let (c, k) = (config.channels, config.kernel);
        ResidualBlock {
            config,
            bn1: BatchNormLayer::new(&format!("{name}.bn1"), c),
            conv1: Conv3dLayer::cubic(&format!("{name}.conv1"), c, c, k, 1, false, rng),
            bn2: BatchNormLayer::new(&format!("{name}.bn2"), c),
            conv2: Conv3dLayer::cubic(&format!("{name}.conv2"), c, c, k, 1, true, rng),
        }
    }

    /// The residual path `F(x)`.
    pub fn residual(&self, x: &Tensor, mode: Mode) -> Result<Tensor, BlocksError> {
        if x.shape().len() != 5 || x.shape()[1] != self.config.channels {
            return Err(BlocksError::ShapeMismatch(format!(
                "residual block of {} channels got input {:?}",
                self.config.channels,
                x.shape()
            )));
        }
        let h = self.bn1.forward(x, mode)?.relu();
        let h = self.conv1.forward(&h)?;
        let h = self.bn2.forward(&h, mode)?.relu();
        self.conv2.forward(&h)
    }

    /// Runs the block as `variant`, regardless of its configured variant.
    pub fn forward_as(&self, x: &Tensor, variant: BlockVariant, mode: Mode) -> Result<Tensor, BlocksError> {
        let f = self.residual(x, mode)?;
        let identity = match variant {
            BlockVariant::PreAct => x.clone(),
            BlockVariant::Itrm => x.tanh(),
        };
        Ok(identity.add(&f)?)
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor, BlocksError> {
        self.forward_as(x, self.config.variant, mode)
    }

    /// Zeroes both residual-path convolutions.
    pub fn zero_residual(&self) {
        self.conv1.zero();
        self.conv2.zero();
    }
}

impl HasParams for ResidualBlock {
    fn collect(&self, out: &mut ParamSet) {
        self.bn1.collect(out);
        self.conv1.collect(out);
        self.bn2.collect(out);
        self.conv2.collect(out);
    }
}

/// `x + F(ReLU(BN(x)))`.
pub fn preact_residual_forward(x: &Tensor, block: &ResidualBlock, mode: Mode) -> Result<Tensor, BlocksError> {
    block.forward_as(x, BlockVariant::PreAct, mode)
}

/// `tanh(x) + F(ReLU(BN(x)))`.
pub fn itrm_forward(x: &Tensor, block: &ResidualBlock, mode: Mode) -> Result<Tensor, BlocksError> {
    block.forward_as(x, BlockVariant::Itrm, mode)
}
