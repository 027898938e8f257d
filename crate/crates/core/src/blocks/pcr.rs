//! Planar convolution residual (PCR) block.

use rand::Rng;

use crate::autodiff::{Conv3dOpts, Tensor};

use super::layers::{Conv3dLayer, HasParams, ParamSet};
use super::BlocksError;

pub const PLANAR_KERNELS: [[usize; 3]; 3] = [[1, 3, 3], [3, 1, 3], [3, 3, 1]];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcrBlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl PcrBlockConfig {
    pub fn kernels(&self) -> [[usize; 3]; 3] {
        PLANAR_KERNELS
    }
}

/// Three planar convolutions, one per orthogonal plane, with ReLU between
/// them, plus a shortcut (identity, or a strided 1×1×1 projection when the
/// stride or width changes). The first convolution carries the stride.
///
/// The block has no biases and no normalization, so it is positively
/// homogeneous: a zero input always maps to zero.
#[derive(Debug, Clone)]
pub struct PcrBlock {
    pub config: PcrBlockConfig,
    pub convs: [Conv3dLayer; 3],
    pub shortcut: Option<Conv3dLayer>,
}

impl PcrBlock {
    pub fn new<R: Rng>(name: &str, config: PcrBlockConfig, rng: &mut R) -> Self {
        let PcrBlockConfig {
            in_channels: cin,
            out_channels: cout,
            stride,
        } = config;
        let conv = |i: usize, cin: usize, stride: usize, rng: &mut R| {
            let k = PLANAR_KERNELS[i];
            Conv3dLayer::new(
                &format!("{name}.conv{}", i + 1),
                cin,
                cout,
                k,
                Conv3dOpts::same(k, stride),
                false,
                rng,
            )
        };
        let convs = [conv(0, cin, stride, rng), conv(1, cout, 1, rng), conv(2, cout, 1, rng)];
        let shortcut = (stride != 1 || cin != cout).then(|| {
            Conv3dLayer::new(
                &format!("{name}.proj"),
                cin,
                cout,
                [1; 3],
                Conv3dOpts::new(stride, 0),
                false,
                rng,
            )
        });
        PcrBlock {
            config,
            convs,
            shortcut,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, BlocksError> {
        if x.shape().len() != 5 || x.shape()[1] != self.config.in_channels {
            return Err(BlocksError::ShapeMismatch(format!(
                "PCR block of {} input channels got {:?}",
                self.config.in_channels,
                x.shape()
            )));
        }
        let h = self.convs[0].forward(x)?.relu();
        let h = self.convs[1].forward(&h)?.relu();
        let h = self.convs[2].forward(&h)?;
        let s = match &self.shortcut {
            Some(p) => p.forward(x)?,
            None => x.clone(),
        };
        Ok(s.add(&h)?)
    }

    /// Weights held by the three planar kernels.
    pub fn planar_weight_count(&self) -> usize {
        self.convs.iter().map(|c| c.weight.tensor.numel()).sum()
    }
}

impl HasParams for PcrBlock {
    fn collect(&self, out: &mut ParamSet) {
        for c in &self.convs {
            c.collect(out);
        }
        if let Some(p) = &self.shortcut {
            p.collect(out);
        }
    }
}
