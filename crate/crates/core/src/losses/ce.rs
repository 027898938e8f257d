//! Cross-entropy losses over class-major logits.

use crate::autodiff::Tensor;

use super::{ClassWeights, LossError, VoxelMask, IGNORE_LABEL, NUM_CLASSES};

/// Splits an N×12×… shape into (N, positions per sample).
fn layout(logits: &Tensor, labels: usize, what: &str) -> Result<(usize, usize), LossError> {
    let s = logits.shape();
    if s.len() < 2 || s[1] != NUM_CLASSES {
        return Err(LossError::ShapeMismatch(format!(
            "{what}: logits must be N×{NUM_CLASSES}×…, got {s:?}"
        )));
    }
    let p: usize = s[2..].iter().product();
    if labels != s[0] * p {
        return Err(LossError::ShapeMismatch(format!(
            "{what}: {labels} labels for logits {s:?} ({} positions)",
            s[0] * p
        )));
    }
    Ok((s[0], p))
}

/// Log-softmax over the class axis at one position.
fn log_softmax_at(x: &[f64], base: usize, p: usize, out: &mut [f64; NUM_CLASSES]) {
    let mut m = f64::NEG_INFINITY;
    for c in 0..NUM_CLASSES {
        m = m.max(x[base + c * p]);
    }
    let mut s = 0.0;
    for c in 0..NUM_CLASSES {
        s += (x[base + c * p] - m).exp();
    }
    let lse = m + s.ln();
    for c in 0..NUM_CLASSES {
        out[c] = x[base + c * p] - lse;
    }
}

/// Cross-entropy against per-position target distributions, reduced as
/// `Σ_v a_v · (−Σ_c q_vc log p_vc) / Σ_v a_v` over positions with `a_v > 0`.
fn soft_ce(
    logits: &Tensor,
    n: usize,
    p: usize,
    terms: Vec<(usize, f64, [f64; NUM_CLASSES])>,
) -> Result<Tensor, LossError> {
    let norm: f64 = terms.iter().map(|t| t.1).sum();
    if terms.is_empty() || norm <= 0.0 {
        return Err(LossError::EmptyMask);
    }
    let x = logits.to_vec();
    let mut loss = 0.0;
    let mut lsm = [0.0; NUM_CLASSES];
    let mut probs = Vec::with_capacity(terms.len());
    for (pos, a, q) in &terms {
        let (b, v) = (pos / p, pos % p);
        let base = b * NUM_CLASSES * p + v;
        log_softmax_at(&x, base, p, &mut lsm);
        let mut term = 0.0;
        for c in 0..NUM_CLASSES {
            term -= q[c] * lsm[c];
        }
        loss += a * term;
        probs.push(lsm.map(f64::exp));
    }
    let shape = logits.shape().to_vec();
    let len = n * NUM_CLASSES * p;
    Ok(Tensor::from_op(
        &[1],
        vec![loss / norm],
        vec![logits.clone()],
        move |g| {
            let scale = g[0] / norm;
            let mut gx = vec![0.0; len];
            for ((pos, a, q), pr) in terms.iter().zip(&probs) {
                let (b, v) = (pos / p, pos % p);
                let base = b * NUM_CLASSES * p + v;
                let qsum: f64 = q.iter().sum();
                for c in 0..NUM_CLASSES {
                    gx[base + c * p] += scale * a * (qsum * pr[c] - q[c]);
                }
            }
            debug_assert_eq!(gx.len(), shape.iter().product::<usize>());
            vec![Some(gx)]
        },
    ))
}

fn check_label(label: u8) -> Result<bool, LossError> {
    match label {
        IGNORE_LABEL => Ok(false),
        l if (l as usize) < NUM_CLASSES => Ok(true),
        l => Err(LossError::LabelOutOfRange(l)),
    }
}

/// Class-weighted cross-entropy `Σ_v w_{y_v}·(−log p_v[y_v]) / Σ_v w_{y_v}`
/// over masked-in voxels. Unannotated voxels (label 255) never contribute.
pub fn weighted_ce(
    logits: &Tensor,
    labels: &[u8],
    weights: &ClassWeights,
    mask: &VoxelMask,
) -> Result<Tensor, LossError> {
    let (n, p) = layout(logits, labels.len(), "weighted_ce")?;
    if mask.len() != labels.len() {
        return Err(LossError::ShapeMismatch(format!(
            "weighted_ce: mask covers {} voxels, labels {}",
            mask.len(),
            labels.len()
        )));
    }
    let mut terms = Vec::new();
    for (pos, &y) in labels.iter().enumerate() {
        if mask.includes(pos) && check_label(y)? {
            let mut q = [0.0; NUM_CLASSES];
            q[y as usize] = 1.0;
            terms.push((pos, weights.get(y as usize), q));
        }
    }
    soft_ce(logits, n, p, terms)
}

/// Label-smoothed cross-entropy averaged over non-ignored pixels. The target
/// puts `1 − smoothing` on the true class plus `smoothing / 12` on every class.
pub fn smooth_ce(logits: &Tensor, labels: &[u8], smoothing: f64, ignore: &[bool]) -> Result<Tensor, LossError> {
    let (n, p) = layout(logits, labels.len(), "smooth_ce")?;
    if !(0.0..1.0).contains(&smoothing) {
        return Err(LossError::InvalidConfig(format!(
            "smoothing must lie in [0, 1), got {smoothing}"
        )));
    }
    if ignore.len() != labels.len() {
        return Err(LossError::ShapeMismatch(format!(
            "smooth_ce: ignore mask covers {} pixels, labels {}",
            ignore.len(),
            labels.len()
        )));
    }
    let mut terms = Vec::new();
    for (pos, &y) in labels.iter().enumerate() {
        if !ignore[pos] && check_label(y)? {
            let mut q = [smoothing / NUM_CLASSES as f64; NUM_CLASSES];
            q[y as usize] += 1.0 - smoothing;
            terms.push((pos, 1.0, q));
        }
    }
    soft_ce(logits, n, p, terms)
}
