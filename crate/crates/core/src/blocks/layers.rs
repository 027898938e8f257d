//! Parameterised conv and batch-norm layers and parameter collection.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{batch_norm, conv3d, Conv3dOpts, Mode, Parameter, RunningStats, Tensor, BN_EPSILON};

use super::BlocksError;

/// Trainable parameters and batch-norm running statistics of a module tree,
/// in a fixed traversal order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    pub params: Vec<Parameter>,
    pub stats: Vec<(String, RunningStats)>,
}

impl ParamSet {
    pub fn numel(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }
}

pub trait HasParams {
    fn collect(&self, out: &mut ParamSet);

    fn param_set(&self) -> ParamSet {
        let mut s = ParamSet::default();
        self.collect(&mut s);
        s
    }

    fn parameter_count(&self) -> usize {
        self.param_set().numel()
    }
}

/// 3D convolution with He (fan-in, normal) weights and zero bias.
#[derive(Debug, Clone)]
pub struct Conv3dLayer {
    pub weight: Parameter,
    pub bias: Option<Parameter>,
    pub opts: Conv3dOpts,
}

impl Conv3dLayer {
    pub fn new<R: Rng>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        opts: Conv3dOpts,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel.iter().product::<usize>();
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let n = out_channels * fan_in;
        let w: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
        let shape = [out_channels, in_channels, kernel[0], kernel[1], kernel[2]];
        Conv3dLayer {
            weight: Parameter::new(format!("{name}.weight"), Tensor::leaf(&shape, w), false),
            bias: bias.then(|| {
                Parameter::new(
                    format!("{name}.bias"),
                    Tensor::leaf(&[out_channels], vec![0.0; out_channels]),
                    true,
                )
            }),
            opts,
        }
    }

    /// Cubic kernel with "same" padding.
    pub fn cubic<R: Rng>(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        Self::new(name, cin, cout, [k; 3], Conv3dOpts::same([k; 3], stride), bias, rng)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.tensor.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.tensor.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, BlocksError> {
        Ok(conv3d(
            x,
            &self.weight.tensor,
            self.bias.as_ref().map(|b| &b.tensor),
            self.opts,
        )?)
    }

    /// Overwrites weights (and bias) with zeros.
    pub fn zero(&self) {
        self.weight.tensor.data_mut().fill(0.0);
        if let Some(b) = &self.bias {
            b.tensor.data_mut().fill(0.0);
        }
    }
}

impl HasParams for Conv3dLayer {
    fn collect(&self, out: &mut ParamSet) {
        out.params.push(self.weight.clone());
        if let Some(b) = &self.bias {
            out.params.push(b.clone());
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormLayer {
    pub name: String,
    pub scale: Parameter,
    pub shift: Parameter,
    pub running: RunningStats,
}

impl BatchNormLayer {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNormLayer {
            name: name.to_string(),
            scale: Parameter::new(
                format!("{name}.scale"),
                Tensor::leaf(&[channels], vec![1.0; channels]),
                true,
            ),
            shift: Parameter::new(
                format!("{name}.shift"),
                Tensor::leaf(&[channels], vec![0.0; channels]),
                true,
            ),
            running: RunningStats::new(channels),
        }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor, BlocksError> {
        Ok(batch_norm(
            x,
            &self.scale.tensor,
            &self.shift.tensor,
            &self.running,
            mode,
            BN_EPSILON,
        )?)
    }
}

impl HasParams for BatchNormLayer {
    fn collect(&self, out: &mut ParamSet) {
        out.params.push(self.scale.clone());
        out.params.push(self.shift.clone());
        out.stats.push((self.name.clone(), self.running.clone()));
    }
}
