use super::{AutodiffError, Tensor};

/// Averages source positions into target cells.
///
/// `input` is N×C×… with P = product of trailing extents source positions per
/// sample; `targets[n][p]` names the flat target cell for source `p` of
/// sample `n` (or `None` to drop it). The result is N×C×`out_dims`, zero where
/// no source lands. Sums run in source order, so the result does not depend on
/// how callers partition work.
pub fn scatter_mean(
    input: &Tensor,
    targets: &[Vec<Option<usize>>],
    out_dims: [usize; 3],
) -> Result<Tensor, AutodiffError> {
    let s = input.shape();
    if s.len() < 2 {
        return Err(AutodiffError::ShapeMismatch(format!(
            "scatter_mean expects N×C×…, got {s:?}"
        )));
    }
    let (n, c) = (s[0], s[1]);
    let p: usize = s[2..].iter().product();
    if targets.len() != n || targets.iter().any(|t| t.len() != p) {
        return Err(AutodiffError::ShapeMismatch(format!(
            "scatter_mean: {} target lists for batch {n}, each must hold {p} entries",
            targets.len()
        )));
    }
    let vol: usize = out_dims.iter().product();
    if targets.iter().flatten().flatten().any(|&t| t >= vol) {
        return Err(AutodiffError::ShapeMismatch(format!(
            "scatter_mean target outside volume {out_dims:?}"
        )));
    }
    let mut inv_count = vec![0.0; n * vol];
    for (b, t) in targets.iter().enumerate() {
        for &v in t.iter().flatten() {
            inv_count[b * vol + v] += 1.0;
        }
    }
    for v in inv_count.iter_mut().filter(|v| **v > 0.0) {
        *v = 1.0 / *v;
    }
    let x = input.to_vec();
    let mut out = vec![0.0; n * c * vol];
    for (b, t) in targets.iter().enumerate() {
        for ch in 0..c {
            let src = &x[(b * c + ch) * p..(b * c + ch + 1) * p];
            let dst = &mut out[(b * c + ch) * vol..(b * c + ch + 1) * vol];
            for (i, tgt) in t.iter().enumerate() {
                if let Some(v) = *tgt {
                    dst[v] += src[i];
                }
            }
            for (d, k) in dst.iter_mut().zip(&inv_count[b * vol..(b + 1) * vol]) {
                *d *= k;
            }
        }
    }
    let targets = targets.to_vec();
    let shape = [n, c, out_dims[0], out_dims[1], out_dims[2]];
    Ok(Tensor::from_op(&shape, out, vec![input.clone()], move |g| {
        let mut dx = vec![0.0; n * c * p];
        for (b, t) in targets.iter().enumerate() {
            for ch in 0..c {
                let gs = &g[(b * c + ch) * vol..(b * c + ch + 1) * vol];
                let ds = &mut dx[(b * c + ch) * p..(b * c + ch + 1) * p];
                for (i, tgt) in t.iter().enumerate() {
                    if let Some(v) = *tgt {
                        ds[i] = gs[v] * inv_count[b * vol + v];
                    }
                }
            }
        }
        vec![Some(dx)]
    }))
}
