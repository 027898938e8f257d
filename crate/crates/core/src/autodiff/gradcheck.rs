//! Central-difference verification of reverse-mode gradients.

use super::{no_grad, AutodiffError, Tensor};

/// `|a − n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Largest relative error between the autodiff gradient of `f(input)` and
/// central differences `(f(x+eps) − f(x−eps)) / 2eps`, over every coordinate
/// of `input`. `f` must return a scalar.
pub fn grad_check<F>(f: F, input: &Tensor, eps: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&Tensor) -> Result<Tensor, AutodiffError>,
{
    let x = if input.is_leaf() && input.requires_grad() {
        input.clone()
    } else {
        Tensor::leaf(input.shape(), input.to_vec())
    };
    grad_check_many(|| f(&x), std::slice::from_ref(&x), eps)
}

/// Like [`grad_check`] but differentiates a closure over captured leaves,
/// checking every coordinate of every tensor in `wrt`.
pub fn grad_check_many<F>(f: F, wrt: &[Tensor], eps: f64) -> Result<f64, AutodiffError>
where
    F: Fn() -> Result<Tensor, AutodiffError>,
{
    let saved: Vec<Option<Vec<f64>>> = wrt.iter().map(|t| t.grad()).collect();
    wrt.iter().for_each(|t| t.zero_grad());
    let loss = f()?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = wrt
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    for (t, g) in wrt.iter().zip(saved) {
        t.set_grad(g);
    }

    let eval = || -> Result<f64, AutodiffError> { no_grad(|| f().map(|l| l.item())) };
    let mut worst = 0.0f64;
    for (t, grad) in wrt.iter().zip(&analytic) {
        for i in 0..t.numel() {
            let orig = t.data()[i];
            t.data_mut()[i] = orig + eps;
            let plus = eval()?;
            t.data_mut()[i] = orig - eps;
            let minus = eval()?;
            t.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(grad[i], numeric));
        }
    }
    Ok(worst)
}
