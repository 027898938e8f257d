use std::cell::RefCell;
use std::rc::Rc;

use super::{AutodiffError, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct Stats {
    mean: Vec<f64>,
    var: Vec<f64>,
}

/// Per-channel running mean/variance, shared between clones.
#[derive(Debug, Clone)]
pub struct RunningStats {
    inner: Rc<RefCell<Stats>>,
    pub momentum: f64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            inner: Rc::new(RefCell::new(Stats {
                mean: vec![0.0; channels],
                var: vec![1.0; channels],
            })),
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.inner.borrow().mean.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.inner.borrow().mean.clone()
    }

    pub fn var(&self) -> Vec<f64> {
        self.inner.borrow().var.clone()
    }

    pub fn set(&self, mean: Vec<f64>, var: Vec<f64>) {
        assert_eq!(mean.len(), var.len());
        *self.inner.borrow_mut() = Stats { mean, var };
    }
}

/// Batch normalization over every axis except axis 1 (channels).
///
/// In [`Mode::Train`] the batch statistics normalize the input and update
/// `running` (unbiased variance, as is customary); in [`Mode::Eval`] the
/// running statistics are used as constants.
pub fn batch_norm(
    input: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    running: &RunningStats,
    mode: Mode,
    epsilon: f64,
) -> Result<Tensor, AutodiffError> {
    let shape = input.shape().to_vec();
    if shape.len() < 2 {
        return Err(AutodiffError::ShapeMismatch(format!(
            "batch_norm needs N×C×…, got {shape:?}"
        )));
    }
    let (n, c) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    if scale.shape() != [c] || shift.shape() != [c] || running.channels() != c {
        return Err(AutodiffError::ShapeMismatch(format!(
            "batch_norm parameters must have {c} entries, got scale {:?}, shift {:?}, running {}",
            scale.shape(),
            shift.shape(),
            running.channels()
        )));
    }
    let count = n * inner;
    let x = input.to_vec();
    let gamma = scale.to_vec();
    let beta = shift.to_vec();
    let idx = move |b: usize, ch: usize| (b * c + ch) * inner;

    let (mean, inv_std) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut s = 0.0;
                for b in 0..n {
                    s += x[idx(b, ch)..idx(b, ch) + inner].iter().sum::<f64>();
                }
                let m = s / count as f64;
                let mut v = 0.0;
                for b in 0..n {
                    v += x[idx(b, ch)..idx(b, ch) + inner]
                        .iter()
                        .map(|t| (t - m) * (t - m))
                        .sum::<f64>();
                }
                mean[ch] = m;
                var[ch] = v / count as f64;
            }
            {
                let mut st = running.inner.borrow_mut();
                let mom = running.momentum;
                let unbias = if count > 1 {
                    count as f64 / (count - 1) as f64
                } else {
                    1.0
                };
                for ch in 0..c {
                    st.mean[ch] = (1.0 - mom) * st.mean[ch] + mom * mean[ch];
                    st.var[ch] = (1.0 - mom) * st.var[ch] + mom * var[ch] * unbias;
                }
            }
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
            (mean, inv_std)
        }
        Mode::Eval => {
            let st = running.inner.borrow();
            (
                st.mean.clone(),
                st.var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect(),
            )
        }
    };

    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let s = idx(b, ch);
            for i in s..s + inner {
                let h = (x[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                out[i] = gamma[ch] * h + beta[ch];
            }
        }
    }

    let parents = vec![input.clone(), scale.clone(), shift.clone()];
    Ok(Tensor::from_op(&shape, out, parents, move |g| {
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let s = idx(b, ch);
                for i in s..s + inner {
                    dbeta[ch] += g[i];
                    dgamma[ch] += g[i] * xhat[i];
                }
            }
        }
        let mut dx = vec![0.0; g.len()];
        match mode {
            Mode::Train => {
                let m = count as f64;
                for ch in 0..c {
                    // dxhat = g·γ; sums reuse dbeta/dgamma.
                    let sum_dxhat = dbeta[ch] * gamma[ch];
                    let sum_dxhat_xhat = dgamma[ch] * gamma[ch];
                    let k = inv_std[ch] / m;
                    for b in 0..n {
                        let s = idx(b, ch);
                        for i in s..s + inner {
                            dx[i] = k * (m * g[i] * gamma[ch] - sum_dxhat - xhat[i] * sum_dxhat_xhat);
                        }
                    }
                }
            }
            Mode::Eval => {
                for b in 0..n {
                    for ch in 0..c {
                        let s = idx(b, ch);
                        for i in s..s + inner {
                            dx[i] = g[i] * gamma[ch] * inv_std[ch];
                        }
                    }
                }
            }
        }
        vec![Some(dx), Some(dgamma), Some(dbeta)]
    }))
}
