//! Camera projection, depth back-projection, visibility, F-TSDF and 2D→3D
//! feature lifting.
//!
//! The nearest-surface distance used by the F-TSDF is euclidean (to the
//! back-projected depth points), tightened by the projective distance along
//! the voxel's own pixel ray. Grids are assumed to be gravity-aligned.

mod camera;
mod grid;
mod image;
mod projection;
mod tsdf;

use thiserror::Error;

pub use camera::{yaw_pitch_rotation, CameraModel, Mat3, Vec3, IDENTITY};
pub use grid::{GridSpec, LabelGrid, VoxelGrid, VoxelScalar};
pub use image::{DepthMap, RgbImage};
pub use projection::{pixel_voxel_targets, project_features};
pub use tsdf::{classify_voxels, compute_ftsdf, depth_point_cloud, ftsdf_value, VisibilityGrid, VisibilityState};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point lies at non-positive camera depth {0}")]
    NonPositiveDepth(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("format violation: {0}")]
    FormatViolation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
