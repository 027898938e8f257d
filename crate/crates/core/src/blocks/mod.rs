//! Network building blocks and the dual-head model.
//!
//! The 3D branch is a U-Net style encoder-decoder: a full-resolution stem,
//! two stride-2 encoder stages (half and quarter resolution), further
//! stride-2 levels down to the bottleneck, and a decoder of trilinear
//! upsampling plus convolution that climbs back only to quarter resolution,
//! adding encoder skips. Every stage holds residual blocks of the configured
//! variant. The number of bottleneck levels is configurable because the desk
//! grid (24×16×24) cannot be halved four times; it defaults to one (1/8
//! scale), while two reproduces the 1/16 bottleneck of a 240×144×240 grid.
//! Mid fusion adds features at the bottleneck before its residual blocks.

mod layers;
mod model;
mod pcr;
mod residual;
mod semantic;

use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::geometry::GeometryError;

pub use layers::{BatchNormLayer, Conv3dLayer, HasParams, ParamSet};
pub use model::{
    fuse, fuse_grid, mdbnet_forward, pcr_chain, FusionStrategy, MdbNet, MdbNetConfig, ModelInput, ModelOutput,
};
pub use pcr::{PcrBlock, PcrBlockConfig, PLANAR_KERNELS};
pub use residual::{itrm_forward, preact_residual_forward, BlockVariant, ResidualBlock, ResidualBlockConfig};
pub use semantic::{provider_paths, read_feature_map, write_feature_map, SemanticHead, SemanticProvider};

#[derive(Debug, Error)]
pub enum BlocksError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("feature provider file missing: {}", .0.display())]
    ProviderFileMissing(PathBuf),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint lacks `{0}`")]
    MissingParameter(String),
    #[error(transparent)]
    Autodiff(AutodiffError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl From<AutodiffError> for BlocksError {
    fn from(e: AutodiffError) -> Self {
        match e {
            AutodiffError::ShapeMismatch(m) => BlocksError::ShapeMismatch(m),
            other => BlocksError::Autodiff(other),
        }
    }
}
