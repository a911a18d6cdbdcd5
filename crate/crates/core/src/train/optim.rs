//! First-order optimizers that update parameter tensors in place.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    SgdMomentum { momentum: f32 },
    Adam { beta1: f32, beta2: f32, eps: f32 },
}

impl OptimizerKind {
    pub const SGD_MOMENTUM: OptimizerKind = OptimizerKind::SgdMomentum { momentum: 0.9 };
    pub const ADAM: OptimizerKind = OptimizerKind::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::SgdMomentum { .. } => "sgd_momentum",
            OptimizerKind::Adam { .. } => "adam",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerKind::SgdMomentum { momentum } => (0.0..1.0).contains(&momentum),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("optimizer: bad hyper-parameters {self:?}")))
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::ADAM
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::ADAM),
            "sgd_momentum" | "sgd" => Ok(OptimizerKind::SGD_MOMENTUM),
            _ => Err(Error::InvalidArgument(format!(
                "unknown optimizer `{s}` (expected adam or sgd_momentum)"
            ))),
        }
    }
}

/// Optimizer state for a fixed, ordered parameter list.
pub struct Optimizer {
    kind: OptimizerKind,
    weight_decay: f32,
    params: Vec<Tensor>,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, weight_decay: f32, params: Vec<Tensor>) -> Result<Self> {
        kind.validate()?;
        if weight_decay.is_nan() || weight_decay < 0.0 {
            return Err(Error::InvalidArgument(format!("weight_decay must be ≥ 0, got {weight_decay}")));
        }
        let zeros: Vec<Vec<f32>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let second = match kind {
            OptimizerKind::Adam { .. } => zeros.clone(),
            OptimizerKind::SgdMomentum { .. } => Vec::new(),
        };
        Ok(Optimizer {
            kind,
            weight_decay,
            params,
            first: zeros,
            second,
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// One update with learning rate `lr`; parameters without a gradient are
    /// treated as having a zero gradient.
    pub fn step(&mut self, lr: f32) {
        self.steps += 1;
        let t = self.steps as i32;
        for (i, p) in self.params.iter().enumerate() {
            let grad = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            let mut data = p.data_mut();
            let wd = self.weight_decay;
            match self.kind {
                OptimizerKind::SgdMomentum { momentum } => {
                    let v = &mut self.first[i];
                    for ((x, &g), v) in data.iter_mut().zip(&grad).zip(v.iter_mut()) {
                        let g = g + wd * *x;
                        *v = momentum * *v + g;
                        *x -= lr * *v;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (((x, &g), m), v) in data.iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                        let g = g + wd * *x;
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *x -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
