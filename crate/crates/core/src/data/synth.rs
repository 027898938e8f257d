//! Box-world scene generator.
//!
//! A scene is a room shell (floor, ceiling, walls) of fixed thickness around
//! an empty interior, with axis-aligned furniture boxes standing on the floor
//! and window/TV patches set into the walls. Depth is ray-cast from a camera
//! near the back wall; labels are rasterized from the same boxes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, Sample};
use crate::geometry::{
    yaw_pitch_rotation, CameraModel, DepthMap, GridSpec, LabelGrid, Mat3, RgbImage, Vec3, VoxelGrid,
};
use crate::losses::{IGNORE_LABEL, NUM_CLASSES};

const CEILING: u8 = 1;
const FLOOR: u8 = 2;
const WALL: u8 = 3;

/// Object classes from most to least frequent under a positive skew.
pub const RANKED_OBJECT_CLASSES: [u8; 8] = [10, 8, 5, 7, 6, 11, 4, 9];

pub const CLASS_PALETTE: [[f64; 3]; NUM_CLASSES] = [
    [0.0, 0.0, 0.0],
    [0.95, 0.95, 0.9],
    [0.55, 0.35, 0.2],
    [0.8, 0.75, 0.6],
    [0.4, 0.7, 0.95],
    [0.9, 0.2, 0.2],
    [0.3, 0.3, 0.85],
    [0.2, 0.7, 0.3],
    [0.9, 0.6, 0.1],
    [0.1, 0.1, 0.1],
    [0.6, 0.2, 0.7],
    [0.1, 0.8, 0.8],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Shell,
    Floor,
    Wall,
}

/// Voxel-aligned box `[min, max)` carrying one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Solid {
    pub min: [usize; 3],
    pub max: [usize; 3],
    pub class: u8,
    pub placement: Placement,
}

impl Solid {
    pub fn contains(&self, v: [usize; 3]) -> bool {
        (0..3).all(|a| self.min[a] <= v[a] && v[a] < self.max[a])
    }

    fn overlaps(&self, o: &Solid) -> bool {
        (0..3).all(|a| self.min[a] < o.max[a] && o.min[a] < self.max[a])
    }
}

struct ClassRule {
    placement: Placement,
    /// Size in cells when cell-aligned (width, height, depth; walls use the first two).
    cells: [usize; 3],
    /// Inclusive voxel size ranges otherwise.
    voxels: [[usize; 2]; 3],
}

fn rule(class: u8) -> ClassRule {
    let (placement, cells, voxels) = match class {
        4 => (Placement::Wall, [1, 1, 0], [[3, 7], [2, 4], [0, 0]]),
        5 => (Placement::Floor, [1, 1, 1], [[2, 3], [3, 4], [2, 3]]),
        6 => (Placement::Floor, [2, 1, 1], [[7, 10], [2, 3], [4, 6]]),
        7 => (Placement::Floor, [2, 1, 1], [[6, 8], [3, 4], [3, 4]]),
        8 => (Placement::Floor, [1, 1, 1], [[4, 6], [3, 4], [4, 6]]),
        9 => (Placement::Wall, [1, 1, 0], [[3, 6], [2, 3], [0, 0]]),
        10 => (Placement::Floor, [1, 2, 1], [[3, 5], [6, 8], [3, 5]]),
        11 => (Placement::Floor, [1, 1, 1], [[1, 3], [1, 3], [1, 3]]),
        _ => unreachable!("not an object class"),
    };
    ClassRule {
        placement,
        cells,
        voxels,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSceneSpec {
    pub grid_dims: [usize; 3],
    pub voxel_size: f64,
    pub truncation: f64,
    /// Room shell thickness in voxels.
    pub shell_thickness: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub focal: f64,
    /// Inclusive range of attempted object placements.
    pub object_count: [usize; 2],
    /// Class-frequency skew: object class of rank r is drawn with weight exp(−skew·r).
    pub skew: f64,
    /// Snap objects to cells of `cell` voxels (one output voxel at scale factor `cell`).
    pub cell_aligned: bool,
    pub cell: usize,
    pub rgb_noise: f64,
    pub max_yaw_deg: f64,
    pub pitch_deg: [f64; 2],
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            grid_dims: [24, 16, 24],
            voxel_size: 0.2,
            truncation: 0.8,
            shell_thickness: 4,
            image_width: 80,
            image_height: 60,
            focal: 60.0,
            object_count: [4, 8],
            skew: 0.0,
            cell_aligned: true,
            cell: 4,
            rgb_noise: 0.03,
            max_yaw_deg: 25.0,
            pitch_deg: [15.0, 25.0],
        }
    }
}

impl SyntheticSceneSpec {
    /// Uniform class draws, cell-aligned objects.
    pub fn easy() -> Self {
        Self::default()
    }

    /// Cell-aligned objects with a long-tailed class distribution.
    pub fn skewed() -> Self {
        SyntheticSceneSpec {
            skew: 0.3,
            object_count: [5, 9],
            ..Self::default()
        }
    }

    /// Room shell only.
    pub fn empty_room() -> Self {
        SyntheticSceneSpec {
            object_count: [0, 0],
            ..Self::default()
        }
    }

    pub fn grid_spec(&self) -> Result<GridSpec, DataError> {
        GridSpec::new(self.grid_dims, [0.0; 3], self.voxel_size, self.truncation)
            .map_err(|e| DataError::InvalidSpec(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidSpec(m));
        self.grid_spec()?;
        let t = self.shell_thickness;
        if t == 0 || self.grid_dims.iter().any(|&d| d <= 2 * t) {
            return bad(format!(
                "shell thickness {t} leaves no interior in {:?}",
                self.grid_dims
            ));
        }
        if self.cell_aligned
            && (self.cell == 0 || t % self.cell != 0 || self.grid_dims.iter().any(|d| d % self.cell != 0))
        {
            return bad(format!(
                "cell {} must divide the shell thickness {t} and every grid dim {:?}",
                self.cell, self.grid_dims
            ));
        }
        if self.image_width == 0 || self.image_height == 0 || !(self.focal > 0.0) {
            return bad("image size and focal length must be positive".into());
        }
        if self.object_count[0] > self.object_count[1] {
            return bad(format!("object_count range {:?} is reversed", self.object_count));
        }
        if !(self.skew >= 0.0 && self.skew.is_finite()) || !(self.rgb_noise >= 0.0) {
            return bad("skew and rgb_noise must be finite and non-negative".into());
        }
        if !(self.max_yaw_deg >= 0.0) || !(self.pitch_deg[0] <= self.pitch_deg[1]) || self.pitch_deg[1].abs() >= 80.0 {
            return bad("camera angle ranges are invalid".into());
        }
        Ok(())
    }

    fn interior(&self) -> ([usize; 3], [usize; 3]) {
        let t = self.shell_thickness;
        ([t; 3], self.grid_dims.map(|d| d - t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub sample: Sample,
    /// Exact voxel count per class of `sample.gt_labels`.
    pub voxel_counts: [u64; NUM_CLASSES],
    /// Every placed box, shell slabs first.
    pub solids: Vec<Solid>,
}

fn object_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_class(u: f64, skew: f64) -> u8 {
    let w: Vec<f64> = (0..RANKED_OBJECT_CLASSES.len())
        .map(|r| (-skew * r as f64).exp())
        .collect();
    let total: f64 = w.iter().sum();
    let mut acc = 0.0;
    for (r, wr) in w.iter().enumerate() {
        acc += wr / total;
        if u < acc {
            return RANKED_OBJECT_CLASSES[r];
        }
    }
    RANKED_OBJECT_CLASSES[RANKED_OBJECT_CLASSES.len() - 1]
}

fn shell_solids(spec: &SyntheticSceneSpec) -> Vec<Solid> {
    let [nx, ny, nz] = spec.grid_dims;
    let t = spec.shell_thickness;
    let s = |min, max, class| Solid {
        min,
        max,
        class,
        placement: Placement::Shell,
    };
    vec![
        s([0, 0, 0], [nx, t, nz], FLOOR),
        s([0, ny - t, 0], [nx, ny, nz], CEILING),
        s([0, t, 0], [t, ny - t, nz], WALL),
        s([nx - t, t, 0], [nx, ny - t, nz], WALL),
        s([t, t, 0], [nx - t, ny - t, t], WALL),
        s([t, t, nz - t], [nx - t, ny - t, nz], WALL),
    ]
}

/// Candidate box for one object, before overlap checks.
fn propose(spec: &SyntheticSceneSpec, class: u8, rng: &mut ChaCha8Rng) -> Solid {
    let r = rule(class);
    let (lo, hi) = spec.interior();
    let [nx, _, nz] = spec.grid_dims;
    let t = spec.shell_thickness;
    let g = if spec.cell_aligned { spec.cell } else { 1 };
    let span = |a: usize| (hi[a] - lo[a]) / g;
    let size = |rng: &mut ChaCha8Rng, a: usize, limit: usize| -> usize {
        let v = if spec.cell_aligned {
            r.cells[a]
        } else {
            rng.random_range(r.voxels[a][0]..=r.voxels[a][1])
        };
        v.clamp(1, limit)
    };
    match r.placement {
        Placement::Floor => {
            let mut s = [size(rng, 0, span(0)), size(rng, 1, span(1)), size(rng, 2, span(2))];
            if rng.random_bool(0.5) && s[2] <= span(0) && s[0] <= span(2) {
                s.swap(0, 2);
            }
            let x = lo[0] + g * rng.random_range(0..=span(0) - s[0]);
            let z = lo[2] + g * rng.random_range(0..=span(2) - s[2]);
            let y = lo[1];
            Solid {
                min: [x, y, z],
                max: [x + g * s[0], y + g * s[1], z + g * s[2]],
                class,
                placement: Placement::Floor,
            }
        }
        Placement::Wall => {
            // 0: x-min wall, 1: x-max wall, 2: far z wall. The wall behind the camera is skipped.
            let wall = rng.random_range(0..3usize);
            let along = if wall == 2 { 0 } else { 2 };
            let w = size(rng, 0, span(along));
            let h = size(rng, 1, span(1));
            let a0 = lo[along] + g * rng.random_range(0..=span(along) - w);
            // windows sit high, screens low
            let slack = span(1) - h;
            let y0 = if class == 4 {
                lo[1]
                    + g * (slack
                        - if spec.cell_aligned {
                            0
                        } else {
                            rng.random_range(0..=slack.min(1))
                        })
            } else {
                lo[1]
                    + g * if spec.cell_aligned {
                        0
                    } else {
                        rng.random_range(0..=slack.min(2))
                    }
            };
            let (mut min, mut max) = ([0; 3], [0; 3]);
            min[1] = y0;
            max[1] = y0 + g * h;
            min[along] = a0;
            max[along] = a0 + g * w;
            let across = 2 - along;
            let (c0, c1) = match wall {
                0 => (0, t),
                1 => (nx - t, nx),
                _ => (nz - t, nz),
            };
            min[across] = c0;
            max[across] = c1;
            Solid {
                min,
                max,
                class,
                placement: Placement::Wall,
            }
        }
        Placement::Shell => unreachable!(),
    }
}

fn random_camera(spec: &SyntheticSceneSpec, rng: &mut ChaCha8Rng) -> Result<CameraModel, DataError> {
    let (lo, hi) = spec.interior();
    let vs = spec.voxel_size;
    let (x0, x1) = (lo[0] as f64 * vs, hi[0] as f64 * vs);
    let (y0, y1) = (lo[1] as f64 * vs, hi[1] as f64 * vs);
    let z0 = lo[2] as f64 * vs;
    let w = x1 - x0;
    let center = [
        x0 + w * rng.random_range(0.3..0.7),
        y0 + (y1 - y0) * rng.random_range(0.7..0.9),
        z0 + vs * rng.random_range(0.3..0.7),
    ];
    let base: Mat3 = [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
    let yaw = spec.max_yaw_deg.to_radians() * rng.random_range(-1.0..=1.0);
    let pitch = rng.random_range(spec.pitch_deg[0]..=spec.pitch_deg[1]).to_radians();
    let rotation = yaw_pitch_rotation(&base, yaw, pitch);
    let (w, h) = (spec.image_width, spec.image_height);
    Ok(CameraModel::from_pose(
        spec.focal,
        spec.focal,
        w as f64 / 2.0,
        h as f64 / 2.0,
        rotation,
        center,
        w,
        h,
    )?)
}

/// Ray parameters where a ray enters and leaves the box `[lo, hi]`, with the
/// axes of the entry and exit faces.
fn slab(o: &Vec3, d: &Vec3, lo: &Vec3, hi: &Vec3) -> Option<(f64, usize, f64, usize)> {
    let (mut t0, mut a0, mut t1, mut a1) = (f64::NEG_INFINITY, 0, f64::INFINITY, 0);
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] < lo[a] || o[a] > hi[a] {
                return None;
            }
            continue;
        }
        let (mut n, mut f) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
        if n > f {
            std::mem::swap(&mut n, &mut f);
        }
        if n > t0 {
            t0 = n;
            a0 = a;
        }
        if f < t1 {
            t1 = f;
            a1 = a;
        }
    }
    (t0 <= t1).then_some((t0, a0, t1, a1))
}

fn world_box(s: &Solid, vs: f64) -> (Vec3, Vec3) {
    (s.min.map(|v| v as f64 * vs), s.max.map(|v| v as f64 * vs))
}

/// Per-pixel result of [`render_depth`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Camera-axis depth in meters.
    pub depth: f64,
    /// Axis of the face normal.
    pub axis: usize,
    pub class: u8,
}

/// Ray-casts the scene through every pixel centre. The camera must sit
/// inside the room interior; shell hits take their class from `labels`.
pub fn render_depth(camera: &CameraModel, spec: &SyntheticSceneSpec, solids: &[Solid], labels: &LabelGrid) -> Vec<Hit> {
    let vs = spec.voxel_size;
    let (lo, hi) = spec.interior();
    let (ilo, ihi) = (lo.map(|v| v as f64 * vs), hi.map(|v| v as f64 * vs));
    let boxes: Vec<(Vec3, Vec3, u8)> = solids
        .iter()
        .filter(|s| s.placement == Placement::Floor)
        .map(|s| {
            let (a, b) = world_box(s, vs);
            (a, b, s.class)
        })
        .collect();
    let o = camera.center();
    let (w, h) = (camera.image_width, camera.image_height);
    let mut hits = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            // camera z component of `d` is 1, so the ray parameter is the depth
            let d = camera.ray_direction(col as f64 + 0.5, row as f64 + 0.5);
            let Some((_, _, t1, a1)) = slab(&o, &d, &ilo, &ihi) else {
                hits.push(Hit {
                    depth: 0.0,
                    axis: 0,
                    class: IGNORE_LABEL,
                });
                continue;
            };
            let mut p = [o[0] + d[0] * t1, o[1] + d[1] * t1, o[2] + d[2] * t1];
            p[a1] += 0.5 * vs * d[a1].signum();
            let class = match labels.spec.locate(p) {
                Some([x, y, z]) => labels.get(0, x, y, z),
                None => IGNORE_LABEL,
            };
            let mut hit = Hit {
                depth: t1,
                axis: a1,
                class,
            };
            for (blo, bhi, c) in &boxes {
                if let Some((t0, a0, _, _)) = slab(&o, &d, blo, bhi) {
                    if t0 > 0.0 && t0 < hit.depth {
                        hit = Hit {
                            depth: t0,
                            axis: a0,
                            class: *c,
                        };
                    }
                }
            }
            hits.push(hit);
        }
    }
    hits
}

/// Generates one scene. The same spec and seed give a bit-identical result.
///
/// The camera and the number of placement attempts come from one random
/// stream and each object from its own, so changing `skew` changes object
/// classes but leaves the camera and the uniform draws in place.
pub fn generate_scene(spec: &SyntheticSceneSpec, seed: u64) -> Result<GeneratedScene, DataError> {
    spec.validate()?;
    let grid = spec.grid_spec()?;
    let mut rng = object_rng(seed, 0);
    let camera = random_camera(spec, &mut rng)?;
    let n_objects = rng.random_range(spec.object_count[0]..=spec.object_count[1]);

    let cam_c = camera.center();
    let (margin, keep_clear) = (0.6, 0.8);
    let vs = spec.voxel_size;
    let mut solids = shell_solids(spec);
    let n_shell = solids.len();
    for i in 0..n_objects {
        let mut orng = object_rng(seed, i as u64 + 1);
        let class = draw_class(orng.random::<f64>(), spec.skew);
        for _ in 0..30 {
            let s = propose(spec, class, &mut orng);
            if solids[n_shell..].iter().any(|o| o.overlaps(&s)) {
                continue;
            }
            // keep the space just in front of the camera free
            let (blo, bhi) = world_box(&s, vs);
            if s.placement == Placement::Floor
                && blo[2] < cam_c[2] + keep_clear
                && blo[0] < cam_c[0] + margin
                && cam_c[0] - margin < bhi[0]
            {
                continue;
            }
            solids.push(s);
            break;
        }
    }

    let mut labels = vec![0u8; grid.voxel_count()];
    let mut counts = [0u64; NUM_CLASSES];
    counts[0] = labels.len() as u64;
    for s in solids
        .iter()
        .filter(|s| s.placement == Placement::Shell)
        .chain(solids.iter().filter(|s| s.placement == Placement::Wall))
        .chain(solids.iter().filter(|s| s.placement == Placement::Floor))
    {
        for x in s.min[0]..s.max[0] {
            for y in s.min[1]..s.max[1] {
                for z in s.min[2]..s.max[2] {
                    let cell = &mut labels[grid.index(x, y, z)];
                    counts[*cell as usize] -= 1;
                    counts[s.class as usize] += 1;
                    *cell = s.class;
                }
            }
        }
    }
    let labels = LabelGrid::from_values(grid, 1, labels)?;

    let hits = render_depth(&camera, spec, &solids, &labels);
    let (w, h) = (spec.image_width, spec.image_height);
    let mut depth = DepthMap::new(w, h, hits.iter().map(|h| h.depth).collect())?;
    depth.quantize_mm();

    let mut noise_rng = object_rng(seed, u64::MAX);
    let noise = Normal::new(0.0, spec.rgb_noise.max(1e-12)).expect("finite std");
    let plane = w * h;
    let mut rgb = vec![0.0; 3 * plane];
    for p in 0..plane {
        let base = if hits[p].class == IGNORE_LABEL {
            [0.5; 3]
        } else {
            CLASS_PALETTE[hits[p].class as usize]
        };
        let shade = [0.8, 1.0, 0.9][hits[p].axis];
        for c in 0..3 {
            let n = if spec.rgb_noise > 0.0 {
                noise.sample(&mut noise_rng)
            } else {
                0.0
            };
            rgb[c * plane + p] = base[c] * shade + n;
        }
    }
    let mut rgb = RgbImage::new(w, h, rgb)?;
    rgb.quantize_u8();

    let sample = Sample::new(format!("scene{seed}"), rgb, depth, camera, labels)?;
    Ok(GeneratedScene {
        sample,
        voxel_counts: counts,
        solids,
    })
}

/// `n` scenes with per-scene seeds derived from `seed`, named `scene0000`, ...
pub fn generate_dataset(spec: &SyntheticSceneSpec, n: usize, seed: u64) -> Result<Vec<GeneratedScene>, DataError> {
    (0..n)
        .map(|i| {
            let s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
            let mut g = generate_scene(spec, s)?;
            g.sample.id = format!("scene{i:04}");
            Ok(g)
        })
        .collect()
}

/// Majority label of each `factor`³ block; ties go to the smaller label value.
pub fn downsample_labels(labels: &LabelGrid, factor: usize) -> Result<LabelGrid, DataError> {
    let coarse = labels.spec.downsampled(factor)?;
    let mut out = Vec::with_capacity(coarse.voxel_count());
    let [cx, cy, cz] = coarse.dims;
    for x in 0..cx {
        for y in 0..cy {
            for z in 0..cz {
                let mut votes = [0usize; 256];
                for dx in 0..factor {
                    for dy in 0..factor {
                        for dz in 0..factor {
                            votes[labels.get(0, x * factor + dx, y * factor + dy, z * factor + dz) as usize] += 1;
                        }
                    }
                }
                let mut best = 0;
                for (l, &v) in votes.iter().enumerate() {
                    if v > votes[best] {
                        best = l;
                    }
                }
                out.push(best as u8);
            }
        }
    }
    Ok(VoxelGrid::from_values(coarse, 1, out)?)
}
