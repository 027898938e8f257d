//! 3D cross-correlation via im2col and GEMM.

use super::{AutodiffError, Tensor};

/// Stride and zero padding per spatial axis (depth, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dOpts {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dOpts {
    pub fn new(stride: usize, padding: usize) -> Self {
        Conv3dOpts {
            stride: [stride; 3],
            padding: [padding; 3],
        }
    }

    /// "Same" padding for an odd kernel with the given stride.
    pub fn same(kernel: [usize; 3], stride: usize) -> Self {
        Conv3dOpts {
            stride: [stride; 3],
            padding: [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2],
        }
    }
}

impl Default for Conv3dOpts {
    fn default() -> Self {
        Conv3dOpts::new(1, 0)
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    k: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
    opts: Conv3dOpts,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kernel.iter().product::<usize>()
    }
    fn cols(&self) -> usize {
        self.output.iter().product()
    }
    fn in_spatial(&self) -> usize {
        self.input.iter().product()
    }
}

/// Output extent of a strided, padded window sweep, or `None` if the kernel
/// does not fit.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// `C = A·B + beta·C` where A is m×k and B is k×n, either operand optionally
/// transposed relative to its row-major storage.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold exactly m*k, k*n and m*n elements and the
    // strides above address them within bounds for the stated layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &[f64], g: &Geometry, col: &mut [f64]) {
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [od, oh, ow] = g.output;
    let [sd, sh, sw] = g.opts.stride;
    let [pd, ph, pw] = g.opts.padding;
    let cols = g.cols();
    let mut r = 0;
    for c in 0..g.c {
        let xc = &x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let row = &mut col[r * cols..(r + 1) * cols];
                    let mut p = 0;
                    for z in 0..od {
                        let zi = (z * sd + a) as isize - pd as isize;
                        for y in 0..oh {
                            let yi = (y * sh + b) as isize - ph as isize;
                            let plane_ok = zi >= 0 && (zi as usize) < id && yi >= 0 && (yi as usize) < ih;
                            for xo in 0..ow {
                                let xi = (xo * sw + e) as isize - pw as isize;
                                row[p] = if plane_ok && xi >= 0 && (xi as usize) < iw {
                                    xc[(zi as usize * ih + yi as usize) * iw + xi as usize]
                                } else {
                                    0.0
                                };
                                p += 1;
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &Geometry, dx: &mut [f64]) {
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [od, oh, ow] = g.output;
    let [sd, sh, sw] = g.opts.stride;
    let [pd, ph, pw] = g.opts.padding;
    let cols = g.cols();
    let mut r = 0;
    for c in 0..g.c {
        let xc = &mut dx[c * id * ih * iw..(c + 1) * id * ih * iw];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let row = &col[r * cols..(r + 1) * cols];
                    let mut p = 0;
                    for z in 0..od {
                        let zi = (z * sd + a) as isize - pd as isize;
                        for y in 0..oh {
                            let yi = (y * sh + b) as isize - ph as isize;
                            let plane_ok = zi >= 0 && (zi as usize) < id && yi >= 0 && (yi as usize) < ih;
                            for xo in 0..ow {
                                let xi = (xo * sw + e) as isize - pw as isize;
                                if plane_ok && xi >= 0 && (xi as usize) < iw {
                                    xc[(zi as usize * ih + yi as usize) * iw + xi as usize] += row[p];
                                }
                                p += 1;
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

/// 3D cross-correlation with zero padding.
///
/// `input` is N×C×D×H×W, `weight` is K×C×kd×kh×kw and `bias` (if any) has K
/// entries. Output is N×K×D'×H'×W' with the usual strided window arithmetic.
pub fn conv3d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    opts: Conv3dOpts,
) -> Result<Tensor, AutodiffError> {
    let (is, ws) = (input.shape(), weight.shape());
    if is.len() != 5 || ws.len() != 5 {
        return Err(AutodiffError::ShapeMismatch(format!(
            "conv3d expects 5-d input and weight, got {is:?} and {ws:?}"
        )));
    }
    if is[1] != ws[1] {
        return Err(AutodiffError::ShapeMismatch(format!(
            "conv3d channel mismatch: input {} vs weight {}",
            is[1], ws[1]
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [ws[0]] {
            return Err(AutodiffError::ShapeMismatch(format!(
                "conv3d bias shape {:?}, expected [{}]",
                b.shape(),
                ws[0]
            )));
        }
    }
    let mut output = [0usize; 3];
    for axis in 0..3 {
        output[axis] =
            conv_output_len(is[2 + axis], ws[2 + axis], opts.stride[axis], opts.padding[axis]).ok_or_else(|| {
                AutodiffError::ShapeMismatch(format!(
                    "conv3d kernel {:?} does not fit input {:?} with {:?}",
                    &ws[2..],
                    &is[2..],
                    opts
                ))
            })?;
    }
    let g = Geometry {
        n: is[0],
        c: is[1],
        k: ws[0],
        input: [is[2], is[3], is[4]],
        kernel: [ws[2], ws[3], ws[4]],
        output,
        opts,
    };
    let (rows, cols, in_sp) = (g.rows(), g.cols(), g.in_spatial());
    let x = input.to_vec();
    let w = weight.to_vec();
    let bias_v = bias.map(|b| b.to_vec());

    let mut out = vec![0.0; g.n * g.k * cols];
    let mut col = vec![0.0; rows * cols];
    for n in 0..g.n {
        im2col(&x[n * g.c * in_sp..(n + 1) * g.c * in_sp], &g, &mut col);
        let o = &mut out[n * g.k * cols..(n + 1) * g.k * cols];
        if let Some(bv) = &bias_v {
            for (kk, chunk) in o.chunks_mut(cols).enumerate() {
                chunk.fill(bv[kk]);
            }
        }
        gemm(g.k, rows, cols, &w, false, &col, false, 1.0, o);
    }

    let mut parents = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let has_bias = bias.is_some();
    let need_input = input.requires_grad();
    let need_weight = weight.requires_grad();
    let shape = [g.n, g.k, output[0], output[1], output[2]];
    Ok(Tensor::from_op(&shape, out, parents, move |gout| {
        let mut dx = need_input.then(|| vec![0.0; g.n * g.c * in_sp]);
        let mut dw = need_weight.then(|| vec![0.0; g.k * rows]);
        let mut col = vec![0.0; rows * cols];
        let mut dcol = vec![0.0; rows * cols];
        for n in 0..g.n {
            let go = &gout[n * g.k * cols..(n + 1) * g.k * cols];
            if let Some(dw) = dw.as_mut() {
                im2col(&x[n * g.c * in_sp..(n + 1) * g.c * in_sp], &g, &mut col);
                gemm(g.k, cols, rows, go, false, &col, true, 1.0, dw);
            }
            if let Some(dx) = dx.as_mut() {
                gemm(rows, g.k, cols, &w, true, go, false, 0.0, &mut dcol);
                col2im(&dcol, &g, &mut dx[n * g.c * in_sp..(n + 1) * g.c * in_sp]);
            }
        }
        let mut grads = vec![dx, dw];
        if has_bias {
            let mut db = vec![0.0; g.k];
            for n in 0..g.n {
                for (kk, d) in db.iter_mut().enumerate() {
                    let s = (n * g.k + kk) * cols;
                    *d += gout[s..s + cols].iter().sum::<f64>();
                }
            }
            grads.push(Some(db));
        }
        grads
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_voxel_is_affine() {
        let x = Tensor::new(&[1, 1, 1, 1, 1], vec![3.0]);
        let w = Tensor::new(&[1, 1, 1, 1, 1], vec![-2.0]);
        let b = Tensor::new(&[1], vec![0.5]);
        let y = conv3d(&x, &w, Some(&b), Conv3dOpts::default()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1, 1]);
        assert_eq!(y.item(), 3.0 * -2.0 + 0.5);
    }

    #[test]
    fn kernel_larger_than_padded_input_fails() {
        let x = Tensor::zeros(&[1, 1, 2, 2, 2]);
        let w = Tensor::zeros(&[1, 1, 5, 5, 5]);
        let err = conv3d(&x, &w, None, Conv3dOpts::new(1, 1)).unwrap_err();
        assert!(matches!(err, AutodiffError::ShapeMismatch(_)));
    }

    #[test]
    fn channel_mismatch_fails() {
        let x = Tensor::zeros(&[1, 2, 3, 3, 3]);
        let w = Tensor::zeros(&[1, 3, 1, 1, 1]);
        assert!(conv3d(&x, &w, None, Conv3dOpts::default()).is_err());
    }

    #[test]
    fn stride_two_halves_extent() {
        let x = Tensor::zeros(&[1, 1, 8, 8, 8]);
        let w = Tensor::zeros(&[2, 1, 3, 3, 3]);
        let y = conv3d(&x, &w, None, Conv3dOpts::new(2, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4, 4, 4]);
    }

    #[test]
    fn gemm_transposes() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        // Aᵀ·B = [[1,3],[2,4]]·B
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }
}
