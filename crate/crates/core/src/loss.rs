//! Class-weighted binary cross-entropy.
//!
//! With prediction `p` (after the sigmoid head), binary target `t` and class
//! weights `(w0, w1)` the loss is the pixel mean of
//!
//! ```text
//! −w1·t·ln(p) − w0·(1 − t)·ln(1 − p)
//! ```
//!
//! The formula as typeset in the source material swaps prediction and label
//! (`−w1·y·log(y_gt) − w0·(1 − y)·log(1 − y_gt)`); that form takes the log of
//! a binary label and has no useful gradient, so the conventional reading
//! above is used.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Tensor};

/// Probabilities are clamped to `[EPS, 1 − EPS]` before taking logs.
pub const PROB_EPS: f32 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `w1 = N_obj / N`, `w0 = N_bg / N`, pooled over the training masks.
    AsWritten,
    /// `w1 = N_bg / N`, `w0 = N_obj / N`: the minority class gets the larger
    /// weight.
    InverseFrequency,
    /// `w0 = w1 = 1`, plain binary cross-entropy.
    Unweighted,
}

impl WeightMode {
    pub const ALL: [WeightMode; 3] = [
        WeightMode::Unweighted,
        WeightMode::AsWritten,
        WeightMode::InverseFrequency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeightMode::AsWritten => "as_written",
            WeightMode::InverseFrequency => "inverse_frequency",
            WeightMode::Unweighted => "unweighted",
        }
    }
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeightMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown weight mode `{s}` (expected as_written, inverse_frequency or unweighted)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    /// Background (matrix) weight.
    pub w0: f32,
    /// Grain weight.
    pub w1: f32,
    pub mode: WeightMode,
}

impl ClassWeights {
    pub const UNWEIGHTED: ClassWeights = ClassWeights {
        w0: 1.0,
        w1: 1.0,
        mode: WeightMode::Unweighted,
    };

    pub fn new(w0: f32, w1: f32, mode: WeightMode) -> Self {
        ClassWeights { w0, w1, mode }
    }
}

/// Derives `(w0, w1)` from pixel counts pooled over every mask. Mask values
/// are binary; any nonzero value counts as grain.
pub fn compute_class_weights<'a, I>(masks: I, mode: WeightMode) -> Result<ClassWeights>
where
    I: IntoIterator<Item = &'a [u8]>,
{
    let (mut grain, mut total) = (0u64, 0u64);
    let mut any = false;
    for m in masks {
        any = true;
        grain += m.iter().filter(|&&v| v != 0).count() as u64;
        total += m.len() as u64;
    }
    if !any || total == 0 {
        return Err(Error::DegenerateWeights("no mask pixels".into()));
    }
    if mode == WeightMode::Unweighted {
        return Ok(ClassWeights::UNWEIGHTED);
    }
    let background = total - grain;
    if grain == 0 || background == 0 {
        return Err(Error::DegenerateWeights(format!(
            "training masks contain a single class ({grain} grain / {background} background pixels)"
        )));
    }
    let obj = (grain as f64 / total as f64) as f32;
    let bg = (background as f64 / total as f64) as f32;
    Ok(match mode {
        WeightMode::AsWritten => ClassWeights::new(bg, obj, mode),
        WeightMode::InverseFrequency => ClassWeights::new(obj, bg, mode),
        WeightMode::Unweighted => unreachable!(),
    })
}

/// Pixel-mean weighted BCE between probabilities `pred` and a binary
/// `target` of the same shape. Returns a `[1]` tensor differentiable w.r.t.
/// `pred`; where clamping applies, the gradient is evaluated at the clamped
/// probability.
pub fn weighted_bce(pred: &Tensor, target: &Tensor, weights: ClassWeights) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "weighted_bce: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let (w0, w1) = (weights.w0 as f64, weights.w1 as f64);
    let lo = PROB_EPS as f64;
    let hi = (1.0 - PROB_EPS) as f64;
    let n = pred.numel() as f64;
    let p = pred.data();
    let t = target.data();
    let mut total = 0.0f64;
    for (&pv, &tv) in p.iter().zip(t.iter()) {
        let pc = (pv as f64).clamp(lo, hi);
        let tv = tv as f64;
        total += -w1 * tv * pc.ln() - w0 * (1.0 - tv) * (1.0 - pc).ln();
    }
    drop((p, t));
    Ok(Tensor::from_op(
        vec![1],
        vec![(total / n) as f32],
        &[pred, target],
        WeightedBceBackward { w0, w1 },
    ))
}

struct WeightedBceBackward {
    w0: f64,
    w1: f64,
}

impl BackwardOp for WeightedBceBackward {
    fn name(&self) -> &'static str {
        "weighted_bce"
    }

    fn backward(&self, grad_out: &[f32], inputs: &[Tensor]) -> Result<Vec<Option<Vec<f32>>>> {
        let p = inputs[0].data();
        let t = inputs[1].data();
        let lo = PROB_EPS as f64;
        let hi = (1.0 - PROB_EPS) as f64;
        let scale = grad_out[0] as f64 / p.len() as f64;
        let dp = p
            .iter()
            .zip(t.iter())
            .map(|(&pv, &tv)| {
                let pc = (pv as f64).clamp(lo, hi);
                let tv = tv as f64;
                ((-self.w1 * tv / pc + self.w0 * (1.0 - tv) / (1.0 - pc)) * scale) as f32
            })
            .collect();
        Ok(vec![Some(dp), None])
    }
}
