//! Finite-difference checks of every differentiable operation and block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    batch_norm, conv3d, grad_check, grad_check_many, resample_volume, scatter_mean, AutodiffError, Conv3dOpts, Mode,
    ResampleMode, RunningStats, Tensor, BN_EPSILON,
};
use crate::blocks::{
    itrm_forward, preact_residual_forward, BlockVariant, PcrBlock, PcrBlockConfig, ResidualBlock, ResidualBlockConfig,
};
use crate::losses::{combined_loss, smooth_ce, weighted_ce, ClassWeights, VoxelMask, IGNORE_LABEL, NUM_CLASSES};

/// Central-difference step used by the suite.
pub const SUITE_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckResult {
    pub name: &'static str,
    pub max_relative_error: f64,
}

fn leaf(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::leaf(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

/// Values bounded away from zero, so ReLU kinks stay outside the stencil.
fn leaf_off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::leaf(
        shape,
        (0..n)
            .map(|_| {
                let m = rng.random_range(0.1..1.5);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
}

fn projection(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

type Check = Box<dyn Fn(&mut ChaCha8Rng) -> Result<f64, AutodiffError>>;

fn checks() -> Vec<(&'static str, Check)> {
    let b = |e: crate::blocks::BlocksError| AutodiffError::ShapeMismatch(e.to_string());
    vec![
        (
            "add",
            Box::new(|r| {
                let (x, y) = (leaf(&[3, 4], r, -1.0, 1.0), leaf(&[3, 4], r, -1.0, 1.0));
                let p = projection(12, r);
                grad_check_many(|| x.add(&y)?.dot_const(&p), &[x.clone(), y.clone()], SUITE_EPS)
            }),
        ),
        (
            "sub",
            Box::new(|r| {
                let (x, y) = (leaf(&[3, 4], r, -1.0, 1.0), leaf(&[3, 4], r, -1.0, 1.0));
                let p = projection(12, r);
                grad_check_many(|| x.sub(&y)?.dot_const(&p), &[x.clone(), y.clone()], SUITE_EPS)
            }),
        ),
        (
            "mul",
            Box::new(|r| {
                let (x, y) = (leaf(&[3, 4], r, -1.0, 1.0), leaf(&[3, 4], r, -1.0, 1.0));
                let p = projection(12, r);
                grad_check_many(|| x.mul(&y)?.dot_const(&p), &[x.clone(), y.clone()], SUITE_EPS)
            }),
        ),
        (
            "scalar ops",
            Box::new(|r| {
                let x = leaf(&[7], r, -1.0, 1.0);
                let p = projection(7, r);
                grad_check(|t| t.mul_scalar(-1.7).add_scalar(0.3).dot_const(&p), &x, SUITE_EPS)
            }),
        ),
        (
            "sum/mean",
            Box::new(|r| {
                let x = leaf(&[2, 5], r, -1.0, 1.0);
                grad_check(|t| Ok(t.tanh().sum().add(&t.mean())?), &x, SUITE_EPS)
            }),
        ),
        (
            "reshape",
            Box::new(|r| {
                let x = leaf(&[2, 3, 4], r, -1.0, 1.0);
                let p = projection(24, r);
                grad_check(|t| t.reshape(&[6, 4])?.tanh().dot_const(&p), &x, SUITE_EPS)
            }),
        ),
        (
            "relu",
            Box::new(|r| {
                let x = leaf_off_zero(&[20], r);
                let p = projection(20, r);
                grad_check(|t| t.relu().dot_const(&p), &x, SUITE_EPS)
            }),
        ),
        (
            "tanh",
            Box::new(|r| {
                let x = leaf(&[20], r, -2.5, 2.5);
                let p = projection(20, r);
                grad_check(|t| t.tanh().dot_const(&p), &x, SUITE_EPS)
            }),
        ),
        (
            "conv3d",
            Box::new(|r| {
                let x = leaf(&[2, 2, 4, 3, 5], r, -1.0, 1.0);
                let w = leaf(&[3, 2, 3, 3, 3], r, -0.5, 0.5);
                let bias = leaf(&[3], r, -0.5, 0.5);
                let p = projection(2 * 3 * 4 * 3 * 5, r);
                grad_check_many(
                    || conv3d(&x, &w, Some(&bias), Conv3dOpts::new(1, 1))?.dot_const(&p),
                    &[x.clone(), w.clone(), bias.clone()],
                    SUITE_EPS,
                )
            }),
        ),
        (
            "conv3d stride 2",
            Box::new(|r| {
                let x = leaf(&[1, 2, 5, 4, 4], r, -1.0, 1.0);
                let w = leaf(&[2, 2, 3, 3, 3], r, -0.5, 0.5);
                let p = projection(2 * 3 * 2 * 2, r);
                grad_check_many(
                    || conv3d(&x, &w, None, Conv3dOpts::new(2, 1))?.dot_const(&p),
                    &[x.clone(), w.clone()],
                    SUITE_EPS,
                )
            }),
        ),
        (
            "conv3d planar",
            Box::new(|r| {
                let x = leaf(&[1, 2, 3, 4, 4], r, -1.0, 1.0);
                let w = leaf(&[2, 2, 1, 3, 3], r, -0.5, 0.5);
                let p = projection(2 * 3 * 4 * 4, r);
                let opts = Conv3dOpts::same([1, 3, 3], 1);
                grad_check_many(
                    || conv3d(&x, &w, None, opts)?.dot_const(&p),
                    &[x.clone(), w.clone()],
                    SUITE_EPS,
                )
            }),
        ),
        (
            "batch_norm",
            Box::new(|r| {
                let x = leaf(&[2, 3, 2, 2, 2], r, -1.0, 1.0);
                let g = leaf(&[3], r, 0.5, 1.5);
                let s = leaf(&[3], r, -0.5, 0.5);
                let p = projection(48, r);
                grad_check_many(
                    || batch_norm(&x, &g, &s, &RunningStats::new(3), Mode::Train, BN_EPSILON)?.dot_const(&p),
                    &[x.clone(), g.clone(), s.clone()],
                    SUITE_EPS,
                )
            }),
        ),
        (
            "trilinear resample",
            Box::new(|r| {
                let x = leaf(&[1, 2, 2, 3, 2], r, -1.0, 1.0);
                let p = projection(2 * 4 * 6 * 4, r);
                grad_check(
                    |t| resample_volume(t, [4, 6, 4], ResampleMode::Trilinear)?.dot_const(&p),
                    &x,
                    SUITE_EPS,
                )
            }),
        ),
        (
            "nearest resample",
            Box::new(|r| {
                let x = leaf(&[1, 2, 4, 4, 2], r, -1.0, 1.0);
                let p = projection(2 * 2 * 2 * 4, r);
                grad_check(
                    |t| resample_volume(t, [2, 2, 4], ResampleMode::Nearest)?.dot_const(&p),
                    &x,
                    SUITE_EPS,
                )
            }),
        ),
        (
            "scatter_mean",
            Box::new(|r| {
                let x = leaf(&[2, 3, 10], r, -1.0, 1.0);
                let targets: Vec<Vec<Option<usize>>> = (0..2)
                    .map(|_| {
                        (0..10)
                            .map(|_| r.random_bool(0.8).then(|| r.random_range(0..8)))
                            .collect()
                    })
                    .collect();
                let p = projection(2 * 3 * 8, r);
                grad_check(|t| scatter_mean(t, &targets, [2, 2, 2])?.dot_const(&p), &x, SUITE_EPS)
            }),
        ),
        (
            "weighted_ce",
            Box::new(|r| {
                let x = leaf(&[2, NUM_CLASSES, 2, 1, 2], r, -2.0, 2.0);
                let labels: Vec<u8> = (0..8)
                    .map(|i| if i == 3 { IGNORE_LABEL } else { r.random_range(0..12) })
                    .collect();
                let w = ClassWeights::new(std::array::from_fn(|c| 0.5 + c as f64 * 0.1)).expect("valid weights");
                let mask = VoxelMask::new((0..8).map(|i| i != 5).collect());
                grad_check(
                    |t| weighted_ce(t, &labels, &w, &mask).map_err(|e| AutodiffError::ShapeMismatch(e.to_string())),
                    &x,
                    SUITE_EPS,
                )
            }),
        ),
        (
            "smooth_ce",
            Box::new(|r| {
                // logits in [−1, 1] keep every probability above the smoothed
                // target mass 0.1/12, so no gradient entry is near zero
                let x = leaf(&[1, NUM_CLASSES, 1, 2, 3], r, -1.0, 1.0);
                let labels: Vec<u8> = (0..6).map(|_| r.random_range(0..12)).collect();
                let ignore = vec![false, true, false, false, false, false];
                grad_check(
                    |t| smooth_ce(t, &labels, 0.1, &ignore).map_err(|e| AutodiffError::ShapeMismatch(e.to_string())),
                    &x,
                    SUITE_EPS,
                )
            }),
        ),
        (
            "combined loss",
            Box::new(|r| {
                let (a, c) = (leaf(&[3], r, -1.0, 1.0), leaf(&[3], r, -1.0, 1.0));
                grad_check_many(
                    || {
                        combined_loss(&a.tanh().sum(), &c.tanh().sum(), 0.5)
                            .map_err(|e| AutodiffError::ShapeMismatch(e.to_string()))
                    },
                    &[a.clone(), c.clone()],
                    SUITE_EPS,
                )
            }),
        ),
        (
            "preact block",
            Box::new(move |r| {
                let blk = ResidualBlock::new("b", ResidualBlockConfig::new(2, BlockVariant::PreAct), r);
                let x = leaf(&[2, 2, 3, 3, 3], r, -1.5, 1.5);
                let p = projection(108, r);
                grad_check(
                    |t| preact_residual_forward(t, &blk, Mode::Train).map_err(b)?.dot_const(&p),
                    &x,
                    SUITE_EPS,
                )
            }),
        ),
        (
            "itrm block",
            Box::new(move |r| {
                let blk = ResidualBlock::new("b", ResidualBlockConfig::new(2, BlockVariant::Itrm), r);
                let x = leaf(&[2, 2, 3, 3, 3], r, -1.5, 1.5);
                let p = projection(108, r);
                grad_check(
                    |t| itrm_forward(t, &blk, Mode::Train).map_err(b)?.dot_const(&p),
                    &x,
                    SUITE_EPS,
                )
            }),
        ),
        (
            "pcr block",
            Box::new(move |r| {
                let blk = PcrBlock::new(
                    "p",
                    PcrBlockConfig {
                        in_channels: 2,
                        out_channels: 3,
                        stride: 2,
                    },
                    r,
                );
                let x = leaf(&[1, 2, 4, 4, 4], r, -1.0, 1.0);
                let p = projection(3 * 8, r);
                grad_check(|t| blk.forward(t).map_err(b)?.dot_const(&p), &x, SUITE_EPS)
            }),
        ),
    ]
}

/// Runs every check with inputs drawn from `seed`; returns the worst relative
/// error per check, in a fixed order.
pub fn run_gradient_suite(seed: u64) -> Result<Vec<GradCheckResult>, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    checks()
        .into_iter()
        .map(|(name, check)| {
            Ok(GradCheckResult {
                name,
                max_relative_error: check(&mut rng)?,
            })
        })
        .collect()
}
