use std::time::Instant;

use mdbnet_core::autodiff::{batch_norm, conv3d, grad_check, Conv3dOpts, Mode, Tensor, BN_EPSILON};
use mdbnet_core::blocks::{
    fuse, fuse_grid, itrm_forward, pcr_chain, preact_residual_forward, BlockVariant, BlocksError, FusionStrategy,
    HasParams, MdbNet, MdbNetConfig, ModelInput, PcrBlock, PcrBlockConfig, ResidualBlock, ResidualBlockConfig,
    SemanticHead, SemanticProvider,
};
use mdbnet_core::geometry::{GridSpec, RgbImage, VoxelGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::leaf(shape, (0..n).map(|_| r.random_range(lo..hi)).collect())
}

fn random_input(batch: usize, dims: [usize; 3], seed: u64) -> ModelInput {
    let mut r = rng(seed);
    let spec = GridSpec::new(dims, [0.0; 3], 0.2, 0.8).unwrap();
    let grids: Vec<VoxelGrid<f32>> = (0..batch)
        .map(|_| {
            VoxelGrid::from_values(
                spec,
                1,
                (0..spec.voxel_count()).map(|_| r.random_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        })
        .collect();
    let (w, h) = (20, 15);
    let images: Vec<RgbImage> = (0..batch)
        .map(|_| RgbImage::new(w, h, (0..3 * w * h).map(|_| r.random::<f64>()).collect()).unwrap())
        .collect();
    let targets: Vec<Vec<Option<usize>>> = (0..batch)
        .map(|_| {
            (0..w * h)
                .map(|_| r.random_bool(0.8).then(|| r.random_range(0..spec.voxel_count())))
                .collect()
        })
        .collect();
    ModelInput::new(
        &grids.iter().collect::<Vec<_>>(),
        &images.iter().collect::<Vec<_>>(),
        targets,
        (0..batch).map(|i| format!("s{i}")).collect(),
    )
    .unwrap()
}

fn block(c: usize, variant: BlockVariant, seed: u64) -> ResidualBlock {
    ResidualBlock::new("b", ResidualBlockConfig::new(c, variant), &mut rng(seed))
}

#[test]
fn zero_residual_preact_is_identity_and_itrm_is_tanh() {
    let x = random_tensor(&[2, 4, 4, 4, 4], 1, -2.0, 2.0);
    let b = block(4, BlockVariant::PreAct, 2);
    b.zero_residual();
    assert_eq!(
        preact_residual_forward(&x, &b, Mode::Train).unwrap().to_vec(),
        x.to_vec()
    );
    let t = itrm_forward(&x, &b, Mode::Train).unwrap().to_vec();
    let expected: Vec<f64> = x.to_vec().iter().map(|v| v.tanh()).collect();
    assert_eq!(t, expected);
    let z = Tensor::zeros(&[1, 4, 2, 2, 2]);
    assert!(itrm_forward(&z, &b, Mode::Train)
        .unwrap()
        .to_vec()
        .iter()
        .all(|v| *v == 0.0));
}

#[test]
fn itrm_minus_preact_is_tanh_minus_identity() {
    let x = random_tensor(&[2, 3, 4, 4, 4], 3, -2.0, 2.0);
    let b = block(3, BlockVariant::Itrm, 4);
    let a = itrm_forward(&x, &b, Mode::Train).unwrap().to_vec();
    let p = preact_residual_forward(&x, &b, Mode::Train).unwrap().to_vec();
    for ((a, p), x) in a.iter().zip(&p).zip(x.to_vec()) {
        assert!(((a - p) - (x.tanh() - x)).abs() < 1e-12);
    }
}

#[test]
fn preact_matches_manual_composition() {
    let x = random_tensor(&[2, 3, 4, 4, 4], 5, -1.0, 1.0);
    let b = block(3, BlockVariant::PreAct, 6);
    let out = preact_residual_forward(&x, &b, Mode::Train).unwrap().to_vec();
    let bn = |t: &Tensor, l: &mdbnet_core::blocks::BatchNormLayer| {
        batch_norm(t, &l.scale.tensor, &l.shift.tensor, &l.running, Mode::Train, BN_EPSILON).unwrap()
    };
    let h = bn(&x, &b.bn1).relu();
    let h = conv3d(&h, &b.conv1.weight.tensor, None, Conv3dOpts::new(1, 1)).unwrap();
    let h = bn(&h, &b.bn2).relu();
    let h = conv3d(
        &h,
        &b.conv2.weight.tensor,
        Some(&b.conv2.bias.as_ref().unwrap().tensor),
        Conv3dOpts::new(1, 1),
    )
    .unwrap();
    let manual = x.add(&h).unwrap().to_vec();
    for (a, m) in out.iter().zip(&manual) {
        assert!((a - m).abs() < 1e-12);
    }
}

#[test]
fn residual_rejects_wrong_channels() {
    let b = block(4, BlockVariant::Itrm, 0);
    let x = Tensor::zeros(&[1, 3, 2, 2, 2]);
    assert!(matches!(b.forward(&x, Mode::Train), Err(BlocksError::ShapeMismatch(_))));
}

#[test]
fn residual_blocks_pass_gradient_checks() {
    for variant in [BlockVariant::PreAct, BlockVariant::Itrm] {
        let b = block(2, variant, 7);
        let x = random_tensor(&[2, 2, 3, 3, 3], 8, -1.5, 1.5);
        let proj: Vec<f64> = (0..2 * 2 * 27).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect();
        let err = grad_check(|t| b.forward(t, Mode::Train).unwrap().dot_const(&proj), &x, 1e-5).unwrap();
        assert!(err < 1e-5, "{variant} input grad error {err}");
    }
}

#[test]
fn pcr_counts_and_shapes() {
    let c = 8;
    let p = PcrBlock::new(
        "p",
        PcrBlockConfig {
            in_channels: c,
            out_channels: c,
            stride: 1,
        },
        &mut rng(0),
    );
    assert_eq!(p.planar_weight_count(), 3 * (c * c * 9));
    let dense = block(c, BlockVariant::PreAct, 0);
    let dense_weights = dense.conv1.weight.tensor.numel() + dense.conv2.weight.tensor.numel();
    assert_eq!(dense_weights, 2 * (c * c * 27));
    assert!(p.parameter_count() < dense.parameter_count());
    for k in p.config.kernels() {
        assert_eq!(k.iter().filter(|d| **d == 1).count(), 1);
    }

    for conv in &p.convs {
        conv.zero();
    }
    let x = random_tensor(&[1, c, 4, 4, 4], 1, -1.0, 1.0);
    assert_eq!(p.forward(&x).unwrap().to_vec(), x.to_vec());

    let s = PcrBlock::new(
        "s",
        PcrBlockConfig {
            in_channels: 2,
            out_channels: 3,
            stride: 2,
        },
        &mut rng(1),
    );
    let y = s.forward(&random_tensor(&[1, 2, 8, 8, 8], 2, -1.0, 1.0)).unwrap();
    assert_eq!(y.shape(), &[1, 3, 4, 4, 4]);
}

#[test]
fn fusion_with_zero_features_is_identity() {
    let widths = [4, 6, 8];
    let stream_late = random_tensor(&[1, 8, 6, 4, 6], 3, -1.0, 1.0);
    let stream_mid = random_tensor(&[1, 8, 3, 2, 3], 4, -1.0, 1.0);
    let stream_early = random_tensor(&[1, 4, 24, 16, 24], 5, -1.0, 1.0);
    let zeros = Tensor::zeros(&[1, 4, 24, 16, 24]);
    let late = pcr_chain("pcr", 2, 4, widths, 0);
    let mid = pcr_chain("pcr", 3, 4, widths, 0);
    assert_eq!(
        fuse(&stream_late, &zeros, FusionStrategy::Late, &late)
            .unwrap()
            .to_vec(),
        stream_late.to_vec()
    );
    assert_eq!(
        fuse(&stream_mid, &zeros, FusionStrategy::Mid, &mid).unwrap().to_vec(),
        stream_mid.to_vec()
    );
    let e = fuse(&stream_early, &zeros, FusionStrategy::Early, &[]).unwrap();
    assert_eq!(e.shape(), stream_early.shape());
    assert_eq!(e.to_vec(), stream_early.to_vec());

    let spec = GridSpec::new([24, 16, 24], [0.0; 3], 0.2, 0.8).unwrap();
    let grid = VoxelGrid::filled(spec, 4, 0.0f32);
    assert_eq!(
        fuse_grid(&stream_late, &grid, FusionStrategy::Late, &late)
            .unwrap()
            .to_vec(),
        stream_late.to_vec()
    );
}

#[test]
fn late_path_reaches_quarter_resolution() {
    let chain = pcr_chain("pcr", 2, 16, [16, 32, 64], 1);
    let mut f = random_tensor(&[1, 16, 24, 16, 24], 0, 0.0, 1.0);
    for b in &chain {
        f = b.forward(&f).unwrap();
    }
    assert_eq!(f.shape(), &[1, 64, 6, 4, 6]);
}

#[test]
fn semantic_head_shapes_and_provider_errors() {
    let head = SemanticHead::new("h", 16, &mut rng(0));
    let rgb = random_tensor(&[1, 3, 1, 7, 9], 0, 0.0, 1.0);
    let (f, l) = head.forward(&rgb).unwrap();
    assert_eq!(f.shape(), &[1, 16, 1, 7, 9]);
    assert_eq!(l.shape(), &[1, 12, 1, 7, 9]);
    let dir = tempfile::tempdir().unwrap();
    let p = SemanticProvider::Files(dir.path().to_path_buf());
    assert!(matches!(
        p.forward(&rgb, &["nope".into()]),
        Err(BlocksError::ProviderFileMissing(_))
    ));
}

#[test]
fn file_provider_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (fp, lp) = mdbnet_core::blocks::provider_paths(dir.path(), "a");
    let feats: Vec<f64> = (0..4 * 6).map(|i| i as f64 * 0.25).collect();
    mdbnet_core::blocks::write_feature_map(&fp, 4, 2, 3, &feats).unwrap();
    mdbnet_core::blocks::write_feature_map(&lp, 12, 2, 3, &vec![0.5; 12 * 6]).unwrap();
    let p = SemanticProvider::Files(dir.path().to_path_buf());
    let (f, l) = p.forward(&Tensor::zeros(&[1, 3, 1, 2, 3]), &["a".into()]).unwrap();
    assert_eq!(f.to_vec(), feats);
    assert_eq!(l.shape(), &[1, 12, 1, 2, 3]);
}

#[test]
fn desk_model_output_shapes_and_finiteness() {
    let input = random_input(2, [24, 16, 24], 1);
    for fusion in [FusionStrategy::Early, FusionStrategy::Mid, FusionStrategy::Late] {
        let cfg = MdbNetConfig {
            fusion,
            ..Default::default()
        };
        let m = MdbNet::new(cfg, 3).unwrap();
        let t = Instant::now();
        let out = m.forward(&input, Mode::Train).unwrap();
        assert_eq!(out.logits3d.shape(), &[2, 12, 6, 4, 6]);
        assert_eq!(out.logits2d.shape(), &[2, 12, 1, 15, 20]);
        assert!(out.logits3d.to_vec().iter().all(|v| v.is_finite()));
        let loss = out.logits3d.sum().add(&out.logits2d.sum()).unwrap();
        loss.backward().unwrap();
        eprintln!("{fusion}: forward+backward {:?}", t.elapsed());
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let input = random_input(2, [24, 16, 24], 9);
    for fusion in [FusionStrategy::Early, FusionStrategy::Mid, FusionStrategy::Late] {
        let m = MdbNet::new(
            MdbNetConfig {
                fusion,
                ..Default::default()
            },
            11,
        )
        .unwrap();
        let out = m.forward(&input, Mode::Train).unwrap();
        let n3 = out.logits3d.numel();
        let n2 = out.logits2d.numel();
        let p3: Vec<f64> = (0..n3)
            .map(|i| ((i * 2654435761usize) % 1000) as f64 / 1000.0 - 0.5)
            .collect();
        let p2: Vec<f64> = (0..n2).map(|i| ((i * 40503usize) % 997) as f64 / 997.0 - 0.5).collect();
        let loss = out
            .logits3d
            .dot_const(&p3)
            .unwrap()
            .add(&out.logits2d.dot_const(&p2).unwrap())
            .unwrap();
        loss.backward().unwrap();
        for p in m.param_set().params {
            let g = p
                .tensor
                .grad()
                .unwrap_or_else(|| panic!("{fusion}: {} has no gradient", p.name));
            let norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm > 0.0, "{fusion}: {} has zero gradient", p.name);
        }
    }
}

#[test]
fn block_variant_changes_values_not_shapes() {
    let input = random_input(1, [24, 16, 24], 2);
    let a = MdbNet::new(
        MdbNetConfig {
            block: BlockVariant::PreAct,
            ..Default::default()
        },
        5,
    )
    .unwrap();
    let b = MdbNet::new(
        MdbNetConfig {
            block: BlockVariant::Itrm,
            ..Default::default()
        },
        5,
    )
    .unwrap();
    let oa = a.forward(&input, Mode::Train).unwrap().logits3d;
    let ob = b.forward(&input, Mode::Train).unwrap().logits3d;
    assert_eq!(oa.shape(), ob.shape());
    assert_ne!(oa.to_vec(), ob.to_vec());
}

#[test]
fn state_round_trip_restores_outputs() {
    let input = random_input(1, [24, 16, 24], 4);
    let a = MdbNet::new(MdbNetConfig::default(), 1).unwrap();
    a.forward(&input, Mode::Train).unwrap();
    let b = MdbNet::new(MdbNetConfig::default(), 2).unwrap();
    // round through f32 first so both sides hold identical values
    a.load_state(&a.state_entries()).unwrap();
    b.load_state(&a.state_entries()).unwrap();
    let oa = a.forward(&input, Mode::Eval).unwrap().logits3d.to_vec();
    let ob = b.forward(&input, Mode::Eval).unwrap().logits3d.to_vec();
    assert_eq!(oa, ob);
    let c = MdbNet::new(
        MdbNetConfig {
            fusion: FusionStrategy::Mid,
            ..Default::default()
        },
        1,
    )
    .unwrap();
    assert!(matches!(
        c.load_state(&a.state_entries()),
        Err(BlocksError::MissingParameter(_))
    ));
}

#[test]
fn config_validation() {
    assert!(MdbNet::new(
        MdbNetConfig {
            grid_dims: [20, 16, 24],
            ..Default::default()
        },
        0
    )
    .is_err());
    assert!(MdbNet::new(
        MdbNetConfig {
            scale_factor: 2,
            ..Default::default()
        },
        0
    )
    .is_err());
    assert!(MdbNet::new(
        MdbNetConfig {
            fusion: FusionStrategy::Early,
            head_channels: 8,
            ..Default::default()
        },
        0
    )
    .is_err());
    let full = MdbNetConfig {
        grid_dims: [240, 144, 240],
        bottleneck_downsamples: 2,
        ..Default::default()
    };
    full.validate().unwrap();
    assert_eq!(full.output_dims(), [60, 36, 60]);
}
