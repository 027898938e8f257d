use super::{AutodiffError, LrSchedule, Tensor};

/// A named trainable tensor.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    /// Normalization parameters and biases are excluded from weight decay.
    pub weight_decay_exempt: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor, weight_decay_exempt: bool) -> Self {
        assert!(tensor.requires_grad(), "parameters must require gradients");
        Parameter {
            name: name.into(),
            tensor,
            weight_decay_exempt,
        }
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    SgdMomentum {
        momentum: f64,
        weight_decay: f64,
    },
    AdamW {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        weight_decay: f64,
    },
}

impl OptimizerKind {
    pub fn sgd_default() -> Self {
        OptimizerKind::SgdMomentum {
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }

    pub fn adamw_default() -> Self {
        OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// Optimizer with per-parameter moment buffers.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    params: Vec<Parameter>,
    /// SGD velocity, or AdamW first moment.
    first: Vec<Vec<f64>>,
    /// AdamW second moment; empty for SGD.
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: Vec<Parameter>) -> Self {
        let first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let second = match kind {
            OptimizerKind::AdamW { .. } => params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            OptimizerKind::SgdMomentum { .. } => Vec::new(),
        };
        OptimizerState {
            kind,
            params,
            first,
            second,
            steps: 0,
        }
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(|p| p.tensor.zero_grad());
    }

    /// Applies one update with learning rate `lr`. Fails without touching any
    /// parameter if one of them lacks a gradient.
    pub fn step(&mut self, lr: f64) -> Result<(), AutodiffError> {
        let grads = self
            .params
            .iter()
            .map(|p| {
                p.tensor
                    .grad()
                    .ok_or_else(|| AutodiffError::MissingGradient(p.name.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.steps += 1;
        match self.kind {
            OptimizerKind::SgdMomentum { momentum, weight_decay } => {
                for ((p, g), v) in self.params.iter().zip(&grads).zip(&mut self.first) {
                    let wd = if p.weight_decay_exempt { 0.0 } else { weight_decay };
                    let mut theta = p.tensor.data_mut();
                    for i in 0..g.len() {
                        v[i] = momentum * v[i] + g[i] + wd * theta[i];
                        theta[i] -= lr * v[i];
                    }
                }
            }
            OptimizerKind::AdamW {
                beta1,
                beta2,
                epsilon,
                weight_decay,
            } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in self
                    .params
                    .iter()
                    .zip(&grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    let wd = if p.weight_decay_exempt { 0.0 } else { weight_decay };
                    let mut theta = p.tensor.data_mut();
                    for i in 0..g.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let mhat = m[i] / c1;
                        let vhat = v[i] / c2;
                        theta[i] -= lr * wd * theta[i];
                        theta[i] -= lr * mhat / (vhat.sqrt() + epsilon);
                    }
                }
            }
        }
        Ok(())
    }

    /// Step with the learning rate the schedule assigns to `step_index`.
    pub fn step_scheduled(&mut self, schedule: &LrSchedule, step_index: usize) -> Result<f64, AutodiffError> {
        let lr = schedule.lr(step_index);
        self.step(lr)?;
        Ok(lr)
    }

    /// Moment buffers as (name, values) pairs, for checkpointing.
    pub fn buffers(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        let first_name = match self.kind {
            OptimizerKind::SgdMomentum { .. } => "momentum",
            OptimizerKind::AdamW { .. } => "exp_avg",
        };
        for (p, b) in self.params.iter().zip(&self.first) {
            out.push((format!("{}.{first_name}", p.name), p.tensor.shape().to_vec(), b.clone()));
        }
        for (p, b) in self.params.iter().zip(&self.second) {
            out.push((format!("{}.exp_avg_sq", p.name), p.tensor.shape().to_vec(), b.clone()));
        }
        out.push(("step".to_string(), vec![1], vec![self.steps as f64]));
        out
    }
}
