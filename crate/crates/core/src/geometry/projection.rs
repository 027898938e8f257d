//! Lifting 2D per-pixel features onto the 3D surfaces seen in a depth map.

use super::{CameraModel, DepthMap, GeometryError, GridSpec, VoxelGrid};

/// For every pixel (row-major), the flat index of the voxel containing the
/// back-projection of its centre, or `None` for missing depth or points
/// outside the grid.
pub fn pixel_voxel_targets(
    camera: &CameraModel,
    depth: &DepthMap,
    spec: &GridSpec,
) -> Result<Vec<Option<usize>>, GeometryError> {
    if camera.image_width != depth.width || camera.image_height != depth.height {
        return Err(GeometryError::DimensionMismatch(format!(
            "depth map {}×{} vs camera image {}×{}",
            depth.width, depth.height, camera.image_width, camera.image_height
        )));
    }
    let mut out = Vec::with_capacity(depth.width * depth.height);
    for row in 0..depth.height {
        for col in 0..depth.width {
            let d = depth.at(col, row);
            let target = if d > 0.0 {
                let p = camera.backproject_pixel(col as f64 + 0.5, row as f64 + 0.5, d)?;
                spec.locate(p).map(|[x, y, z]| spec.index(x, y, z))
            } else {
                None
            };
            out.push(target);
        }
    }
    Ok(out)
}

/// Projects a C×H×W feature map (row-major per channel) into a C-channel
/// voxel grid. Each voxel hit by one or more pixels receives the mean of
/// their feature vectors; all other voxels are zero.
pub fn project_features(
    camera: &CameraModel,
    features: &[f64],
    channels: usize,
    depth: &DepthMap,
    spec: &GridSpec,
) -> Result<VoxelGrid<f32>, GeometryError> {
    let plane = depth.width * depth.height;
    if features.len() != channels * plane {
        return Err(GeometryError::DimensionMismatch(format!(
            "feature map holds {} values, expected {channels}×{}×{}",
            features.len(),
            depth.height,
            depth.width
        )));
    }
    let targets = pixel_voxel_targets(camera, depth, spec)?;
    let n = spec.voxel_count();
    let mut counts = vec![0u32; n];
    for t in targets.iter().flatten() {
        counts[*t] += 1;
    }
    let mut sums = vec![0.0f64; channels * n];
    for c in 0..channels {
        let src = &features[c * plane..(c + 1) * plane];
        let dst = &mut sums[c * n..(c + 1) * n];
        for (p, t) in targets.iter().enumerate() {
            if let Some(v) = t {
                dst[*v] += src[p];
            }
        }
    }
    let values = sums
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let k = counts[i % n];
            if k == 0 {
                0.0
            } else {
                (s / k as f64) as f32
            }
        })
        .collect();
    VoxelGrid::from_values(*spec, channels, values)
}
