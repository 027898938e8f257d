use mdbnet_core::autodiff::*;
use mdbnet_core::gradsuite::{run_gradient_suite, SUITE_EPS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..shape.iter().product::<usize>())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect()
}

/// Direct seven-loop cross-correlation.
fn conv_loops(
    x: &[f64],
    xs: [usize; 5],
    w: &[f64],
    ws: [usize; 5],
    bias: Option<&[f64]>,
    stride: [usize; 3],
    pad: [usize; 3],
) -> (Vec<f64>, [usize; 5]) {
    let [n, c, d, h, wd] = xs;
    let [k, _, kd, kh, kw] = ws;
    let od = (d + 2 * pad[0] - kd) / stride[0] + 1;
    let oh = (h + 2 * pad[1] - kh) / stride[1] + 1;
    let ow = (wd + 2 * pad[2] - kw) / stride[2] + 1;
    let mut out = vec![0.0; n * k * od * oh * ow];
    for b in 0..n {
        for o in 0..k {
            for z in 0..od {
                for y in 0..oh {
                    for q in 0..ow {
                        let mut acc = bias.map_or(0.0, |bs| bs[o]);
                        for ci in 0..c {
                            for a in 0..kd {
                                for e in 0..kh {
                                    for f in 0..kw {
                                        let iz = (z * stride[0] + a) as isize - pad[0] as isize;
                                        let iy = (y * stride[1] + e) as isize - pad[1] as isize;
                                        let ix = (q * stride[2] + f) as isize - pad[2] as isize;
                                        if iz < 0
                                            || iy < 0
                                            || ix < 0
                                            || iz >= d as isize
                                            || iy >= h as isize
                                            || ix >= wd as isize
                                        {
                                            continue;
                                        }
                                        let xi =
                                            (((b * c + ci) * d + iz as usize) * h + iy as usize) * wd + ix as usize;
                                        let wi = (((o * c + ci) * kd + a) * kh + e) * kw + f;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        out[(((b * k + o) * od + z) * oh + y) * ow + q] = acc;
                    }
                }
            }
        }
    }
    (out, [n, k, od, oh, ow])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv3d_matches_direct_loops(
        n in 1usize..3,
        c in 1usize..3,
        k in 1usize..4,
        spatial in prop::array::uniform3(3usize..7),
        kernel in prop::array::uniform3(1usize..4),
        stride in prop::array::uniform3(1usize..3),
        pad in prop::array::uniform3(0usize..2),
        with_bias in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = [n, c, spatial[0], spatial[1], spatial[2]];
        let ws = [k, c, kernel[0], kernel[1], kernel[2]];
        let x = random(&xs, &mut rng);
        let w = random(&ws, &mut rng);
        let b = random(&[k], &mut rng);
        let bias = with_bias.then(|| Tensor::new(&[k], b.clone()));
        let got = conv3d(&Tensor::new(&xs, x.clone()), &Tensor::new(&ws, w.clone()), bias.as_ref(), Conv3dOpts { stride, padding: pad }).unwrap();
        let (expect, shape) = conv_loops(&x, xs, &w, ws, with_bias.then_some(&b[..]), stride, pad);
        prop_assert_eq!(got.shape(), &shape[..]);
        for (g, e) in got.to_vec().iter().zip(&expect) {
            prop_assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn elementwise_gradients_are_analytic(values in prop::collection::vec(-3.0..3.0f64, 1..20)) {
        let n = values.len();
        let x = Tensor::leaf(&[n], values.clone());
        let y = x.mul(&x).unwrap().add(&x.tanh()).unwrap().sum();
        y.backward().unwrap();
        let g = x.grad().unwrap();
        for i in 0..n {
            let t = values[i].tanh();
            prop_assert!((g[i] - (2.0 * values[i] + 1.0 - t * t)).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_output_len_arithmetic() {
    assert_eq!(conv_output_len(24, 3, 1, 1), Some(24));
    assert_eq!(conv_output_len(24, 3, 2, 1), Some(12));
    assert_eq!(conv_output_len(2, 5, 1, 0), None);
}

#[test]
fn gradient_suite_passes_for_several_seeds() {
    assert!(SUITE_EPS > 0.0);
    for seed in 0..3 {
        let results = run_gradient_suite(seed).unwrap();
        assert!(results.len() >= 20);
        for r in results {
            assert!(
                r.max_relative_error < 1e-5,
                "seed {seed} {}: {}",
                r.name,
                r.max_relative_error
            );
        }
    }
}

#[test]
fn grad_check_detects_a_wrong_gradient() {
    // A custom op whose backward is off by a factor of two.
    let wrong = |x: &Tensor| -> Result<Tensor, AutodiffError> {
        let data: Vec<f64> = x.to_vec().iter().map(|v| v * v).collect();
        let xc = x.clone();
        let y = Tensor::from_op(x.shape(), data, vec![x.clone()], move |g| {
            let xs = xc.to_vec();
            vec![Some(g.iter().zip(&xs).map(|(g, x)| g * x).collect())]
        });
        Ok(y.sum())
    };
    let x = Tensor::leaf(&[3], vec![0.5, -1.0, 2.0]);
    let err = grad_check(wrong, &x, 1e-6).unwrap();
    assert!((err - 0.5).abs() < 1e-6, "{err}");
    assert!(grad_check(|x: &Tensor| Ok(x.mul(x)?.sum()), &x, 1e-6).unwrap() < 1e-8);
    assert_eq!(relative_error(0.0, 0.0), 0.0);
    assert!((relative_error(1.0, 2.0) - 0.5).abs() < 1e-15);
}

#[test]
fn no_grad_builds_no_graph() {
    let x = Tensor::leaf(&[2], vec![1.0, 2.0]);
    let y = no_grad(|| {
        assert!(!grad_enabled());
        x.mul(&x).unwrap().sum()
    });
    assert!(grad_enabled());
    assert!(!y.requires_grad());
    assert!(matches!(
        x.mul(&x).unwrap().backward(),
        Err(AutodiffError::NonScalarLoss(_))
    ));
}

#[test]
fn sgd_momentum_matches_hand_computation() {
    let w = Tensor::leaf(&[2], vec![1.0, -2.0]);
    let b = Tensor::leaf(&[1], vec![0.5]);
    let mut opt = OptimizerState::new(
        OptimizerKind::SgdMomentum {
            momentum: 0.9,
            weight_decay: 0.1,
        },
        vec![
            Parameter::new("w", w.clone(), false),
            Parameter::new("b", b.clone(), true),
        ],
    );
    // loss = 3·w0 + w1 + 2·b, so gradients are constant.
    let step = |opt: &mut OptimizerState| {
        opt.zero_grad();
        let l = w.dot_const(&[3.0, 1.0]).unwrap().add(&b.mul_scalar(2.0).sum()).unwrap();
        l.backward().unwrap();
        opt.step(0.1).unwrap();
    };
    step(&mut opt);
    // v = g + wd·θ; θ -= lr·v
    let v1 = [3.0 + 0.1 * 1.0, 1.0 + 0.1 * -2.0];
    let w1 = [1.0 - 0.1 * v1[0], -2.0 - 0.1 * v1[1]];
    let b1 = 0.5 - 0.1 * 2.0;
    assert_eq!(w.to_vec(), w1.to_vec());
    assert!((b.to_vec()[0] - b1).abs() < 1e-15);
    step(&mut opt);
    let v2 = [0.9 * v1[0] + 3.0 + 0.1 * w1[0], 0.9 * v1[1] + 1.0 + 0.1 * w1[1]];
    let w2 = [w1[0] - 0.1 * v2[0], w1[1] - 0.1 * v2[1]];
    for (g, e) in w.to_vec().iter().zip(w2) {
        assert!((g - e).abs() < 1e-14);
    }
    let names: Vec<String> = opt.buffers().into_iter().map(|(n, _, _)| n).collect();
    assert_eq!(names, ["w.momentum", "b.momentum", "step"]);
    assert_eq!(opt.steps_taken(), 2);
}

#[test]
fn adamw_matches_hand_computation() {
    let w = Tensor::leaf(&[1], vec![2.0]);
    let mut opt = OptimizerState::new(
        OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        },
        vec![Parameter::new("w", w.clone(), false)],
    );
    let (mut m, mut v, mut theta) = (0.0f64, 0.0f64, 2.0f64);
    for t in 1..=3 {
        opt.zero_grad();
        // loss = θ², gradient 2θ
        w.mul(&w).unwrap().sum().backward().unwrap();
        opt.step(0.05).unwrap();
        let g = 2.0 * theta;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mhat = m / (1.0 - 0.9f64.powi(t));
        let vhat = v / (1.0 - 0.999f64.powi(t));
        theta -= 0.05 * 0.01 * theta;
        theta -= 0.05 * mhat / (vhat.sqrt() + 1e-8);
        assert!((w.to_vec()[0] - theta).abs() < 1e-14, "step {t}");
    }
    let names: Vec<String> = opt.buffers().into_iter().map(|(n, _, _)| n).collect();
    assert_eq!(names, ["w.exp_avg", "w.exp_avg_sq", "step"]);
}

#[test]
fn optimizer_refuses_missing_gradients() {
    let w = Tensor::leaf(&[1], vec![1.0]);
    let mut opt = OptimizerState::new(
        OptimizerKind::sgd_default(),
        vec![Parameter::new("w", w.clone(), false)],
    );
    assert!(matches!(opt.step(0.1), Err(AutodiffError::MissingGradient(_))));
    assert_eq!(w.to_vec(), [1.0]);
}

#[test]
fn schedules_hit_their_landmarks() {
    let s = LrSchedule::one_cycle(0.01, 1000);
    assert!((s.lr(0) - 0.01 / 25.0).abs() < 1e-15);
    assert!((s.lr(300) - 0.01).abs() < 1e-15);
    assert!((s.lr(1000) - 0.01 / 1e4).abs() < 1e-15);
    assert_eq!(s.lr(5000), s.lr(1000));
    let mut prev = f64::INFINITY;
    for t in 300..=1000 {
        assert!(s.lr(t) <= prev);
        prev = s.lr(t);
    }
    let c = LrSchedule::cosine_decay(2e-3, 100);
    assert_eq!(c.lr(0), 2e-3);
    assert!((c.lr(50) - (1e-7 + (2e-3 - 1e-7) * 0.5)).abs() < 1e-15);
    assert!((c.lr(100) - 1e-7).abs() < 1e-15);
}

#[test]
fn checkpoint_round_trip_and_violations() {
    let ckpt = Checkpoint {
        params: vec![
            CheckpointEntry::from_f64(
                "stem.weight",
                &[2, 1, 3, 3, 3],
                &(0..54).map(|i| i as f64 * 0.01).collect::<Vec<_>>(),
            ),
            CheckpointEntry::from_f64("bn.running_var", &[2], &[1.0, 2.5]),
        ],
        optimizer: vec![CheckpointEntry::from_f64("step", &[1], &[7.0])],
    };
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &ckpt).unwrap();
    assert_eq!(&bytes[..4], b"MDB1");
    assert_eq!(read_checkpoint(&bytes[..]).unwrap(), ckpt);
    assert!(matches!(
        read_checkpoint(&bytes[..bytes.len() - 2]),
        Err(AutodiffError::FormatViolation(_))
    ));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        read_checkpoint(&bad[..]),
        Err(AutodiffError::FormatViolation(_))
    ));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(read_checkpoint(&extra[..]).is_err());
}

#[test]
fn batch_norm_eval_uses_running_stats() {
    let stats = RunningStats::new(1);
    stats.set(vec![1.0], vec![4.0]);
    let x = Tensor::new(&[1, 1, 2], vec![3.0, -1.0]);
    let y = batch_norm(
        &x,
        &Tensor::new(&[1], vec![2.0]),
        &Tensor::new(&[1], vec![0.5]),
        &stats,
        Mode::Eval,
        0.0,
    )
    .unwrap();
    assert_eq!(y.to_vec(), vec![2.0 * 1.0 + 0.5, 2.0 * -1.0 + 0.5]);
    // Training mode normalizes with batch statistics and updates the running ones.
    let stats = RunningStats::new(1);
    let y = batch_norm(
        &x,
        &Tensor::new(&[1], vec![1.0]),
        &Tensor::new(&[1], vec![0.0]),
        &stats,
        Mode::Train,
        0.0,
    )
    .unwrap();
    assert_eq!(y.to_vec(), vec![1.0, -1.0]);
    assert!((stats.mean()[0] - BN_MOMENTUM * 1.0).abs() < 1e-15);
    assert!((stats.var()[0] - ((1.0 - BN_MOMENTUM) + BN_MOMENTUM * 8.0)).abs() < 1e-12);
}
