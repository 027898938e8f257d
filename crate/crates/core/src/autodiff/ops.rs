//! Elementwise arithmetic, reductions and activations.

use super::{AutodiffError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<(), AutodiffError> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor, AutodiffError> {
        same_shape(self, other, "add")?;
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone(), other.clone()],
            |g| vec![Some(g.to_vec()), Some(g.to_vec())],
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, AutodiffError> {
        same_shape(self, other, "sub")?;
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone(), other.clone()],
            |g| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())],
        ))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor, AutodiffError> {
        same_shape(self, other, "mul")?;
        let a = self.to_vec();
        let b = other.to_vec();
        let data: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        Ok(Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone(), other.clone()],
            move |g| {
                let ga = g.iter().zip(&b).map(|(g, y)| g * y).collect();
                let gb = g.iter().zip(&a).map(|(g, x)| g * x).collect();
                vec![Some(ga), Some(gb)]
            },
        ))
    }

    pub fn mul_scalar(&self, s: f64) -> Tensor {
        let data = self.data().iter().map(|v| v * s).collect();
        Tensor::from_op(self.shape(), data, vec![self.clone()], move |g| {
            vec![Some(g.iter().map(|v| v * s).collect())]
        })
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        let data = self.data().iter().map(|v| v + s).collect();
        Tensor::from_op(self.shape(), data, vec![self.clone()], |g| vec![Some(g.to_vec())])
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&self) -> Tensor {
        let n = self.numel();
        let total = self.data().iter().sum();
        Tensor::from_op(&[1], vec![total], vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        self.sum().mul_scalar(1.0 / n as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor, AutodiffError> {
        if super::tensor::numel(shape) != self.numel() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "reshape {:?} -> {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(Tensor::from_op(shape, self.to_vec(), vec![self.clone()], |g| {
            vec![Some(g.to_vec())]
        }))
    }

    pub fn activation(&self, kind: Activation) -> Tensor {
        match kind {
            Activation::Relu => self.relu(),
            Activation::Tanh => self.tanh(),
        }
    }

    pub fn relu(&self) -> Tensor {
        let x = self.to_vec();
        let data = x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        Tensor::from_op(self.shape(), data, vec![self.clone()], move |g| {
            vec![Some(
                g.iter().zip(&x).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect(),
            )]
        })
    }

    pub fn tanh(&self) -> Tensor {
        let y: Vec<f64> = self.data().iter().map(|v| v.tanh()).collect();
        let saved = y.clone();
        Tensor::from_op(self.shape(), y, vec![self.clone()], move |g| {
            vec![Some(g.iter().zip(&saved).map(|(g, y)| g * (1.0 - y * y)).collect())]
        })
    }

    /// `Σ self ⊙ weights` against a constant weight array; used to turn any
    /// tensor into a scalar with a non-degenerate gradient.
    pub fn dot_const(&self, weights: &[f64]) -> Result<Tensor, AutodiffError> {
        if weights.len() != self.numel() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "dot_const: {} weights for {} values",
                weights.len(),
                self.numel()
            )));
        }
        let total = self.data().iter().zip(weights).map(|(a, b)| a * b).sum();
        let w = weights.to_vec();
        Ok(Tensor::from_op(&[1], vec![total], vec![self.clone()], move |g| {
            vec![Some(w.iter().map(|w| w * g[0]).collect())]
        }))
    }
}
