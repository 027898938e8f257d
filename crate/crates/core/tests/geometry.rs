use mdbnet_core::data::{generate_scene, SyntheticSceneSpec};
use mdbnet_core::geometry::*;
use proptest::prelude::*;

/// Rodrigues rotation about a (not necessarily unit) axis.
fn axis_angle(axis: Vec3, angle: f64) -> Mat3 {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = axis.map(|a| a / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

fn camera_strategy() -> impl Strategy<Value = CameraModel> {
    (
        (20.0..200.0f64, 20.0..200.0f64),
        (prop::array::uniform3(-1.0..1.0f64), 0.0..std::f64::consts::PI),
        prop::array::uniform3(-3.0..3.0f64),
        (8usize..64, 8usize..64),
    )
        .prop_filter("axis must be non-degenerate", |(_, (a, _), _, _)| {
            a.iter().map(|v| v * v).sum::<f64>() > 1e-3
        })
        .prop_map(|((fx, fy), (axis, angle), t, (w, h))| {
            CameraModel::new(fx, fy, w as f64 / 2.0, h as f64 / 2.0, axis_angle(axis, angle), t, w, h).unwrap()
        })
}

proptest! {
    #[test]
    fn backprojection_inverts_projection(
        cam in camera_strategy(),
        fu in 0.0..1.0f64,
        fv in 0.0..1.0f64,
        depth in 0.1..20.0f64,
    ) {
        let (u, v) = (fu * cam.image_width as f64, fv * cam.image_height as f64);
        let p = cam.backproject_pixel(u, v, depth).unwrap();
        let (u2, v2, d2) = cam.project_point(p).unwrap();
        prop_assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9 && (depth - d2).abs() < 1e-9);
        let c = cam.center();
        let dir = cam.ray_direction(u, v);
        for a in 0..3 {
            prop_assert!((c[a] + depth * dir[a] - p[a]).abs() < 1e-9);
        }
    }

    #[test]
    fn camera_text_round_trip(cam in camera_strategy()) {
        let back = CameraModel::from_text(&cam.to_text(), cam.image_width, cam.image_height).unwrap();
        prop_assert_eq!(back, cam);
    }

    #[test]
    fn vxg_round_trip(
        dims in prop::array::uniform3(1usize..6),
        origin in prop::array::uniform3(-5.0..5.0f64),
        vs in 0.01..1.0f64,
        channels in 1usize..4,
        seed in any::<u64>(),
    ) {
        let spec = GridSpec::new(dims, origin, vs, 4.0 * vs).unwrap();
        let n = channels * spec.voxel_count();
        let values: Vec<f32> = (0..n).map(|i| ((seed.wrapping_add(i as u64) % 1000) as f32) / 500.0 - 1.0).collect();
        let g = VoxelGrid::from_values(spec, channels, values).unwrap();
        prop_assert_eq!(VoxelGrid::<f32>::from_bytes(&g.to_bytes()).unwrap(), g);
        let labels = VoxelGrid::from_values(spec, 1, (0..spec.voxel_count()).map(|i| (i % 12) as u8).collect()).unwrap();
        prop_assert_eq!(LabelGrid::from_bytes(&labels.to_bytes()).unwrap(), labels);
    }

    #[test]
    fn flat_index_is_x_slowest(dims in prop::array::uniform3(1usize..9), pick in any::<usize>()) {
        let spec = GridSpec::new(dims, [0.0; 3], 0.1, 0.4).unwrap();
        let i = pick % spec.voxel_count();
        let [x, y, z] = spec.coords(i);
        prop_assert_eq!(i, (x * dims[1] + y) * dims[2] + z);
        prop_assert_eq!(spec.locate(spec.voxel_center(x, y, z)), Some([x, y, z]));
    }
}

#[test]
fn pinhole_reference_values() {
    let cam = CameraModel::with_intrinsics(500.0, 400.0, 320.0, 240.0, 640, 480).unwrap();
    let (u, v, z) = cam.project_point([0.5, -0.25, 2.0]).unwrap();
    assert!((u - 445.0).abs() < 1e-12 && (v - 190.0).abs() < 1e-12 && z == 2.0);
    assert!(matches!(
        cam.project_point([0.0, 0.0, -1.0]),
        Err(GeometryError::NonPositiveDepth(_))
    ));
    assert!(matches!(
        cam.backproject_pixel(1.0, 1.0, 0.0),
        Err(GeometryError::NonPositiveDepth(_))
    ));
    assert_eq!(cam.pixel_at(639.999, 0.0), Some((639, 0)));
    assert_eq!(cam.pixel_at(640.0, 0.0), None);
    assert_eq!(cam.pixel_at(-0.001, 3.0), None);
    // Translated camera: world point at the camera centre plus 3 m forward.
    let cam = CameraModel::from_pose(100.0, 100.0, 50.0, 50.0, IDENTITY, [1.0, 2.0, 3.0], 100, 100).unwrap();
    assert_eq!(cam.center(), [1.0, 2.0, 3.0]);
    assert_eq!(cam.project_point([1.0, 2.0, 6.0]).unwrap(), (50.0, 50.0, 3.0));
}

#[test]
fn invalid_cameras_are_rejected() {
    let skew = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    assert!(CameraModel::new(1.0, 1.0, 0.0, 0.0, skew, [0.0; 3], 4, 4).is_err());
    assert!(CameraModel::with_intrinsics(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
    assert!(CameraModel::with_intrinsics(1.0, 1.0, 0.0, 0.0, 0, 4).is_err());
    assert!(matches!(
        CameraModel::from_text("1 2 3\n", 4, 4),
        Err(GeometryError::FormatViolation(_))
    ));
}

#[test]
fn pitch_looks_down_and_yaw_turns() {
    let base = [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
    let r = yaw_pitch_rotation(&base, 0.0, 0.3);
    let cam = CameraModel::from_pose(10.0, 10.0, 5.0, 5.0, r, [0.0; 3], 10, 10).unwrap();
    let axis = cam.ray_direction(5.0, 5.0);
    // World y is up, so looking down means a negative y component.
    assert!(axis[1] < 0.0 && axis[2] > 0.0);
    let r = yaw_pitch_rotation(&base, 0.0, 0.0);
    assert_eq!(r, base);
}

/// Independent re-derivation of a voxel's visibility state.
fn oracle_state(cam: &CameraModel, depth: &DepthMap, p: Vec3, voxel_size: f64) -> VisibilityState {
    let r = &cam.rotation;
    let q: Vec<f64> = (0..3)
        .map(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + cam.translation[i])
        .collect();
    if q[2] <= 0.0 {
        return VisibilityState::OutsideFrustum;
    }
    let u = cam.fx * q[0] / q[2] + cam.cx;
    let v = cam.fy * q[1] / q[2] + cam.cy;
    if u < 0.0 || v < 0.0 || u >= depth.width as f64 || v >= depth.height as f64 {
        return VisibilityState::OutsideFrustum;
    }
    let d = depth.values[v as usize * depth.width + u as usize];
    if d <= 0.0 {
        VisibilityState::OutsideFrustum
    } else if (q[2] - d).abs() <= voxel_size {
        VisibilityState::Surface
    } else if q[2] < d {
        VisibilityState::VisibleEmpty
    } else {
        VisibilityState::Occluded
    }
}

#[test]
fn visibility_and_ftsdf_match_brute_force() {
    let spec = SyntheticSceneSpec::easy();
    for seed in 0..6 {
        let scene = generate_scene(&spec, seed).unwrap();
        let s = &scene.sample;
        let grid = s.spec();
        let vis = classify_voxels(&s.camera, &s.depth, &grid).unwrap();
        let points = depth_point_cloud(&s.camera, &s.depth).unwrap();
        assert_eq!(points.len(), s.depth.values.iter().filter(|d| **d > 0.0).count());
        for i in 0..grid.voxel_count() {
            let [x, y, z] = grid.coords(i);
            let c = grid.voxel_center(x, y, z);
            let state = oracle_state(&s.camera, &s.depth, c, grid.voxel_size);
            assert_eq!(vis.states[i], state, "seed {seed} voxel {x},{y},{z}");
            // Brute-force nearest surface point over the whole cloud.
            let nearest = points
                .iter()
                .map(|p| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            let expect = match state {
                VisibilityState::OutsideFrustum => 0.0,
                _ => {
                    let (u, v, cz) = s.camera.project_point(c).unwrap();
                    let observed = s.depth.at(u as usize, v as usize);
                    let d = nearest.min((cz - observed).abs());
                    let sign = if state == VisibilityState::Occluded { -1.0 } else { 1.0 };
                    sign * (1.0 - (d / grid.truncation).min(1.0))
                }
            };
            let got = s.ftsdf.values[i] as f64;
            assert!(
                (got - expect).abs() < 1e-6,
                "seed {seed} voxel {x},{y},{z}: {got} vs {expect}"
            );
        }
    }
}

#[test]
fn ftsdf_value_formula() {
    use VisibilityState::*;
    assert_eq!(ftsdf_value(Surface, 0.0, 0.8), 1.0);
    assert_eq!(ftsdf_value(VisibleEmpty, 0.4, 0.8), 0.5);
    assert_eq!(ftsdf_value(Occluded, 0.2, 0.8), -0.75);
    assert_eq!(ftsdf_value(Occluded, 5.0, 0.8), 0.0);
    assert_eq!(ftsdf_value(OutsideFrustum, 0.0, 0.8), 0.0);
}

#[test]
fn visibility_downsample_rules() {
    use VisibilityState::*;
    let spec = GridSpec::new([2, 2, 2], [0.0; 3], 0.1, 0.4).unwrap();
    let grid = |s: [VisibilityState; 8]| VisibilityGrid {
        spec,
        states: s.to_vec(),
    };
    let coarse = |g: VisibilityGrid| g.downsample(2).unwrap().states[0];
    let o = OutsideFrustum;
    let (e, s, c) = (VisibleEmpty, Surface, Occluded);
    assert_eq!(coarse(grid([o, o, o, o, o, s, e, e])), OutsideFrustum);
    assert_eq!(coarse(grid([o, o, o, o, s, e, e, e])), Surface);
    assert_eq!(coarse(grid([e, e, e, e, c, c, c, c])), Occluded);
    assert_eq!(coarse(grid([e, e, e, e, e, c, c, c])), VisibleEmpty);
    assert!(grid([e; 8]).downsample(3).is_err());
}

#[test]
fn pixel_targets_and_feature_projection() {
    let cam = CameraModel::with_intrinsics(4.0, 4.0, 2.0, 2.0, 4, 4).unwrap();
    let spec = GridSpec::new([4, 4, 4], [-1.0, -1.0, 0.0], 0.5, 1.0).unwrap();
    // Left half at 1.2 m, right half at 1.7 m, one hole.
    let mut values: Vec<f64> = (0..16).map(|i| if i % 4 < 2 { 1.2 } else { 1.7 }).collect();
    values[5] = 0.0;
    let depth = DepthMap::new(4, 4, values).unwrap();
    let targets = pixel_voxel_targets(&cam, &depth, &spec).unwrap();
    assert_eq!(targets[5], None);
    for (p, t) in targets.iter().enumerate() {
        if let Some(t) = t {
            let (col, row) = (p % 4, p / 4);
            let q = cam
                .backproject_pixel(col as f64 + 0.5, row as f64 + 0.5, depth.at(col, row))
                .unwrap();
            let [x, y, z] = spec.coords(*t);
            assert_eq!(spec.locate(q), Some([x, y, z]));
        }
    }
    // Two channels: pixel index and a constant.
    let feats: Vec<f64> = (0..16).map(|i| i as f64).chain(std::iter::repeat_n(2.0, 16)).collect();
    let grid = project_features(&cam, &feats, 2, &depth, &spec).unwrap();
    for v in 0..spec.voxel_count() {
        let hits: Vec<usize> = (0..16).filter(|&p| targets[p] == Some(v)).collect();
        if hits.is_empty() {
            assert_eq!(grid.values[v], 0.0);
            assert_eq!(grid.values[spec.voxel_count() + v], 0.0);
        } else {
            let mean = hits.iter().sum::<usize>() as f64 / hits.len() as f64;
            assert!((grid.values[v] as f64 - mean).abs() < 1e-6);
            assert_eq!(grid.values[spec.voxel_count() + v], 2.0);
        }
    }
    assert!(project_features(&cam, &feats[..31], 2, &depth, &spec).is_err());
}
