use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pointwise {
    Relu,
    Sigmoid,
}

pub fn pointwise(input: &Tensor, kind: Pointwise) -> Tensor {
    match kind {
        Pointwise::Relu => relu(input),
        Pointwise::Sigmoid => sigmoid(input),
    }
}

pub fn relu(input: &Tensor) -> Tensor {
    let out: Vec<f32> = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_op(input.shape().to_vec(), out, &[input], ReluBackward)
}

struct ReluBackward;

impl BackwardOp for ReluBackward {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, grad_out: &[f32], inputs: &[Tensor]) -> Result<Vec<Option<Vec<f32>>>> {
        let x = inputs[0].data();
        let dx = grad_out
            .iter()
            .zip(x.iter())
            .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
            .collect();
        Ok(vec![Some(dx)])
    }
}

/// Smallest gap to 0 and 1 that f32 can hold next to 1.0. Keeping the
/// output inside it means a saturated logit never rounds to exactly 0 or 1.
const SIGMOID_MARGIN: f32 = 1.0 / 16_777_216.0;

pub fn sigmoid(input: &Tensor) -> Tensor {
    let out: Vec<f32> = input
        .data()
        .iter()
        .map(|&v| (1.0 / (1.0 + (-v).exp())).clamp(SIGMOID_MARGIN, 1.0 - SIGMOID_MARGIN))
        .collect();
    let saved = out.clone();
    Tensor::from_op(input.shape().to_vec(), out, &[input], SigmoidBackward { y: saved })
}

struct SigmoidBackward {
    y: Vec<f32>,
}

impl BackwardOp for SigmoidBackward {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn backward(&self, grad_out: &[f32], _inputs: &[Tensor]) -> Result<Vec<Option<Vec<f32>>>> {
        let dx = grad_out
            .iter()
            .zip(&self.y)
            .map(|(&g, &y)| g * y * (1.0 - y))
            .collect();
        Ok(vec![Some(dx)])
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let out = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), out, &[a, b], AddBackward))
}

struct AddBackward;

impl BackwardOp for AddBackward {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, grad_out: &[f32], inputs: &[Tensor]) -> Result<Vec<Option<Vec<f32>>>> {
        Ok(inputs
            .iter()
            .map(|t| t.requires_grad().then(|| grad_out.to_vec()))
            .collect())
    }
}

/// Elementwise product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let out = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), out, &[a, b], MulBackward))
}

struct MulBackward;

impl BackwardOp for MulBackward {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, grad_out: &[f32], inputs: &[Tensor]) -> Result<Vec<Option<Vec<f32>>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let da = a.requires_grad().then(|| {
            let bd = b.data();
            grad_out.iter().zip(bd.iter()).map(|(g, v)| g * v).collect()
        });
        let db = b.requires_grad().then(|| {
            let ad = a.data();
            grad_out.iter().zip(ad.iter()).map(|(g, v)| g * v).collect()
        });
        Ok(vec![da, db])
    }
}

/// Sum of all elements as a `[1]` tensor. Accumulates in `f64`.
pub fn sum(input: &Tensor) -> Tensor {
    let s = input.data().iter().map(|&v| v as f64).sum::<f64>() as f32;
    Tensor::from_op(vec![1], vec![s], &[input], ScaleBroadcast { scale: 1.0 })
}

pub fn mean(input: &Tensor) -> Tensor {
    let n = input.numel() as f64;
    let s = (input.data().iter().map(|&v| v as f64).sum::<f64>() / n) as f32;
    Tensor::from_op(vec![1], vec![s], &[input], ScaleBroadcast { scale: (1.0 / n) as f32 })
}

struct ScaleBroadcast {
    scale: f32,
}

impl BackwardOp for ScaleBroadcast {
    fn name(&self) -> &'static str {
        "reduce"
    }

    fn backward(&self, grad_out: &[f32], inputs: &[Tensor]) -> Result<Vec<Option<Vec<f32>>>> {
        Ok(vec![Some(vec![grad_out[0] * self.scale; inputs[0].numel()])])
    }
}
