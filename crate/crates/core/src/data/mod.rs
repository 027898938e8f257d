//! Samples, synthetic scenes, on-disk datasets, splits and early stopping.

mod io;
mod split;
mod synth;

use std::path::PathBuf;

use crate::geometry::{
    compute_ftsdf, CameraModel, DepthMap, GeometryError, GridSpec, LabelGrid, RgbImage, Vec3, VoxelGrid,
};
use crate::losses::{IGNORE_LABEL, NUM_CLASSES};

pub use io::{load_sample, read_manifest, save_sample, write_manifest, SamplePaths};
pub use split::{early_stop, kfold_split, Fold, StopDecision, TrainState};
pub use synth::{
    downsample_labels, generate_dataset, generate_scene, render_depth, GeneratedScene, Hit, Placement, Solid,
    SyntheticSceneSpec, CLASS_PALETTE, RANKED_OBJECT_CLASSES,
};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("need 2 ≤ k ≤ n, got k={k} n={n}")]
    InvalidK { k: usize, n: usize },
    #[error("inconsistent sample: {0}")]
    Inconsistent(String),
    #[error("format violation: {0}")]
    FormatViolation(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One RGB-D observation with its full-resolution labels and F-TSDF input.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub camera: CameraModel,
    pub gt_labels: LabelGrid,
    pub ftsdf: VoxelGrid<f32>,
}

impl Sample {
    /// Checks dimensions and label range, then voxelizes the depth map.
    pub fn new(
        id: impl Into<String>,
        rgb: RgbImage,
        depth: DepthMap,
        camera: CameraModel,
        gt_labels: LabelGrid,
    ) -> Result<Self, DataError> {
        if (rgb.width, rgb.height) != (depth.width, depth.height)
            || (camera.image_width, camera.image_height) != (depth.width, depth.height)
        {
            return Err(DataError::Inconsistent(format!(
                "rgb {}×{}, depth {}×{}, camera {}×{}",
                rgb.width, rgb.height, depth.width, depth.height, camera.image_width, camera.image_height
            )));
        }
        if gt_labels.channels != 1 {
            return Err(DataError::Inconsistent(format!(
                "label grid has {} channels",
                gt_labels.channels
            )));
        }
        if let Some(&bad) = gt_labels
            .values
            .iter()
            .find(|&&l| l as usize >= NUM_CLASSES && l != IGNORE_LABEL)
        {
            return Err(DataError::Inconsistent(format!("label {bad} out of range")));
        }
        let ftsdf = compute_ftsdf(&camera, &depth, &gt_labels.spec)?;
        Ok(Sample {
            id: id.into(),
            rgb,
            depth,
            camera,
            gt_labels,
            ftsdf,
        })
    }

    pub fn spec(&self) -> GridSpec {
        self.gt_labels.spec
    }

    /// Per-pixel class of the surface seen at that pixel. 255 where depth is
    /// missing or no labeled voxel is found near the measured point.
    pub fn pixel_labels(&self) -> Vec<u8> {
        pixel_labels(&self.camera, &self.depth, &self.gt_labels)
    }
}

/// Label of the surface at a back-projected depth point. Probes a 2 mm cube
/// around the point, farthest along the ray first, then steps up to one
/// voxel further along the ray.
pub(crate) fn pixel_labels(camera: &CameraModel, depth: &DepthMap, labels: &LabelGrid) -> Vec<u8> {
    const EPS: f64 = 2e-3;
    let spec = labels.spec;
    let mut out = vec![IGNORE_LABEL; depth.width * depth.height];
    for row in 0..depth.height {
        for col in 0..depth.width {
            let d = depth.at(col, row);
            if d <= 0.0 {
                continue;
            }
            let (u, v) = (col as f64 + 0.5, row as f64 + 0.5);
            let dir = camera.ray_direction(u, v);
            let Ok(p) = camera.backproject_pixel(u, v, d) else {
                continue;
            };
            let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
            let mut probes: Vec<(f64, Vec3)> = Vec::with_capacity(31);
            for i in -1..=1 {
                for j in -1..=1 {
                    for k in -1..=1 {
                        let o = [i as f64 * EPS, j as f64 * EPS, k as f64 * EPS];
                        let along = o[0] * dir[0] + o[1] * dir[1] + o[2] * dir[2];
                        probes.push((-along, [p[0] + o[0], p[1] + o[1], p[2] + o[2]]));
                    }
                }
            }
            probes.sort_by(|a, b| a.0.total_cmp(&b.0));
            for k in 1..=4 {
                let step = 0.25 * k as f64 * spec.voxel_size / norm;
                probes.push((0.0, [p[0] + dir[0] * step, p[1] + dir[1] * step, p[2] + dir[2] * step]));
            }
            let hit = probes.iter().find_map(|(_, q)| {
                let [x, y, z] = spec.locate(*q)?;
                let l = labels.get(0, x, y, z);
                (l != 0).then_some(l)
            });
            if let Some(l) = hit {
                out[row * depth.width + col] = l;
            }
        }
    }
    out
}

/// Location of a dataset on disk: the manifest and its sample entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<SamplePaths>,
}
