//! Visibility classification and the flipped TSDF.

use std::collections::HashMap;

use super::{CameraModel, DepthMap, GeometryError, GridSpec, Vec3, VoxelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum VisibilityState {
    VisibleEmpty = 0,
    Surface = 1,
    Occluded = 2,
    OutsideFrustum = 3,
}

impl VisibilityState {
    pub fn in_frustum(self) -> bool {
        self != VisibilityState::OutsideFrustum
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityGrid {
    pub spec: GridSpec,
    pub states: Vec<VisibilityState>,
}

impl VisibilityGrid {
    pub fn get(&self, x: usize, y: usize, z: usize) -> VisibilityState {
        self.states[self.spec.index(x, y, z)]
    }

    pub fn count(&self, state: VisibilityState) -> usize {
        self.states.iter().filter(|s| **s == state).count()
    }

    /// Coarsens by `factor`. A cell is OutsideFrustum when more than half its
    /// voxels are; otherwise Surface if it holds any surface voxel, else the
    /// majority of Occluded vs. VisibleEmpty (ties count as Occluded).
    pub fn downsample(&self, factor: usize) -> Result<VisibilityGrid, GeometryError> {
        let coarse = self.spec.downsampled(factor)?;
        let mut states = Vec::with_capacity(coarse.voxel_count());
        let [cx, cy, cz] = coarse.dims;
        for x in 0..cx {
            for y in 0..cy {
                for z in 0..cz {
                    let mut counts = [0usize; 4];
                    for dx in 0..factor {
                        for dy in 0..factor {
                            for dz in 0..factor {
                                let s = self.get(x * factor + dx, y * factor + dy, z * factor + dz);
                                counts[s as usize] += 1;
                            }
                        }
                    }
                    let total = factor * factor * factor;
                    let state = if 2 * counts[VisibilityState::OutsideFrustum as usize] > total {
                        VisibilityState::OutsideFrustum
                    } else if counts[VisibilityState::Surface as usize] > 0 {
                        VisibilityState::Surface
                    } else if counts[VisibilityState::Occluded as usize]
                        >= counts[VisibilityState::VisibleEmpty as usize]
                    {
                        VisibilityState::Occluded
                    } else {
                        VisibilityState::VisibleEmpty
                    };
                    states.push(state);
                }
            }
        }
        Ok(VisibilityGrid { spec: coarse, states })
    }
}

fn check_dims(camera: &CameraModel, depth: &DepthMap) -> Result<(), GeometryError> {
    if camera.image_width != depth.width || camera.image_height != depth.height {
        return Err(GeometryError::DimensionMismatch(format!(
            "depth map {}×{} vs camera image {}×{}",
            depth.width, depth.height, camera.image_width, camera.image_height
        )));
    }
    Ok(())
}

/// Where a voxel centre lands in the depth image.
struct Sighting {
    camera_depth: f64,
    observed: f64,
}

fn sight(camera: &CameraModel, depth: &DepthMap, p: Vec3) -> Option<Sighting> {
    let (u, v, z) = camera.project_point(p).ok()?;
    let (col, row) = camera.pixel_at(u, v)?;
    let observed = depth.at(col, row);
    (observed > 0.0).then_some(Sighting {
        camera_depth: z,
        observed,
    })
}

fn state_of(s: &Option<Sighting>, voxel_size: f64) -> VisibilityState {
    match s {
        None => VisibilityState::OutsideFrustum,
        Some(s) if (s.camera_depth - s.observed).abs() <= voxel_size => VisibilityState::Surface,
        Some(s) if s.camera_depth < s.observed => VisibilityState::VisibleEmpty,
        Some(_) => VisibilityState::Occluded,
    }
}

/// Labels every voxel by projecting its centre into the depth map.
pub fn classify_voxels(
    camera: &CameraModel,
    depth: &DepthMap,
    spec: &GridSpec,
) -> Result<VisibilityGrid, GeometryError> {
    check_dims(camera, depth)?;
    let mut states = Vec::with_capacity(spec.voxel_count());
    for i in 0..spec.voxel_count() {
        let [x, y, z] = spec.coords(i);
        states.push(state_of(
            &sight(camera, depth, spec.voxel_center(x, y, z)),
            spec.voxel_size,
        ));
    }
    Ok(VisibilityGrid { spec: *spec, states })
}

/// Back-projects every pixel with a valid depth through its pixel centre.
pub fn depth_point_cloud(camera: &CameraModel, depth: &DepthMap) -> Result<Vec<Vec3>, GeometryError> {
    check_dims(camera, depth)?;
    let mut pts = Vec::new();
    for row in 0..depth.height {
        for col in 0..depth.width {
            let d = depth.at(col, row);
            if d > 0.0 {
                pts.push(camera.backproject_pixel(col as f64 + 0.5, row as f64 + 0.5, d)?);
            }
        }
    }
    Ok(pts)
}

/// Uniform hash over points, bucketed by cells of side `cell`.
struct PointHash<'a> {
    cell: f64,
    points: &'a [Vec3],
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> PointHash<'a> {
    fn new(points: &'a [Vec3], cell: f64) -> Self {
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i);
        }
        PointHash { cell, points, buckets }
    }

    fn key(p: &Vec3, cell: f64) -> [i64; 3] {
        p.map(|c| (c / cell).floor() as i64)
    }

    /// Exact nearest distance when it is below `cell`; otherwise some value ≥ `cell`.
    fn nearest(&self, q: &Vec3) -> f64 {
        let k = Self::key(q, self.cell);
        let mut best2 = f64::INFINITY;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &i in ids {
                            let p = &self.points[i];
                            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                            best2 = best2.min(d2);
                        }
                    }
                }
            }
        }
        best2.sqrt().min(self.cell)
    }
}

/// Flipped-TSDF value for a signed state and a surface distance.
///
/// `s · (1 − min(1, d/τ))` with `s` = +1 for visible space (including the
/// surface itself), −1 for occluded space and 0 outside the frustum.
pub fn ftsdf_value(state: VisibilityState, distance: f64, truncation: f64) -> f64 {
    let sign = match state {
        VisibilityState::VisibleEmpty | VisibilityState::Surface => 1.0,
        VisibilityState::Occluded => -1.0,
        VisibilityState::OutsideFrustum => 0.0,
    };
    sign * (1.0 - (distance / truncation).min(1.0)) + 0.0
}

/// Single-channel flipped TSDF of a depth map.
///
/// The surface distance of a voxel is the smaller of its euclidean distance
/// to the back-projected depth points and its camera-axis distance to the
/// depth sample it projects onto. Values are magnitude 1 on surfaces, decay
/// to 0 at the truncation distance, and carry the visibility sign.
pub fn compute_ftsdf(camera: &CameraModel, depth: &DepthMap, spec: &GridSpec) -> Result<VoxelGrid<f32>, GeometryError> {
    check_dims(camera, depth)?;
    let points = depth_point_cloud(camera, depth)?;
    let hash = PointHash::new(&points, spec.truncation);
    let mut values = Vec::with_capacity(spec.voxel_count());
    for i in 0..spec.voxel_count() {
        let [x, y, z] = spec.coords(i);
        let c = spec.voxel_center(x, y, z);
        let s = sight(camera, depth, c);
        let state = state_of(&s, spec.voxel_size);
        let value = match &s {
            None => 0.0,
            Some(s) => {
                let d = hash.nearest(&c).min((s.camera_depth - s.observed).abs());
                ftsdf_value(state, d, spec.truncation)
            }
        };
        values.push(value as f32);
    }
    VoxelGrid::from_values(*spec, 1, values)
}
