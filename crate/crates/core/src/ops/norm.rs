use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalize with the batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates; no side effects.
    Eval,
}

/// Per-channel batch normalization over `N×H×W`.
///
/// In train mode the running estimates become
/// `(1 − momentum)·running + momentum·batch`, where the batch variance is the
/// biased (population) variance also used for normalization.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm2d(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    mode: BatchNormMode,
    eps: f32,
    momentum: f32,
) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    for (name, t) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running_mean", running_mean),
        ("running_var", running_var),
    ] {
        if t.shape() != [c] {
            return Err(Error::Shape(format!(
                "batch_norm2d: {name} has shape {:?}, input has {c} channels",
                t.shape()
            )));
        }
    }
    let plane = h * w;
    let count = n * plane;
    if count == 0 {
        return Err(Error::InvalidArgument("batch_norm2d: empty batch".into()));
    }

    let x = input.data();
    let (mean, inv_std): (Vec<f32>, Vec<f32>) = match mode {
        BatchNormMode::Train => {
            let stats: Vec<(f64, f64)> = (0..c)
                .into_par_iter()
                .map(|ch| {
                    let mut sum = 0.0f64;
                    for s in 0..n {
                        let start = (s * c + ch) * plane;
                        sum += x[start..start + plane].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    let mean = sum / count as f64;
                    let mut sq = 0.0f64;
                    for s in 0..n {
                        let start = (s * c + ch) * plane;
                        sq += x[start..start + plane]
                            .iter()
                            .map(|&v| (v as f64 - mean).powi(2))
                            .sum::<f64>();
                    }
                    (mean, sq / count as f64)
                })
                .collect();
            {
                let mut rm = running_mean.data_mut();
                let mut rv = running_var.data_mut();
                for (ch, &(m, v)) in stats.iter().enumerate() {
                    rm[ch] = (1.0 - momentum) * rm[ch] + momentum * m as f32;
                    rv[ch] = (1.0 - momentum) * rv[ch] + momentum * v as f32;
                }
            }
            stats
                .iter()
                .map(|&(m, v)| (m as f32, (1.0 / (v + eps as f64).sqrt()) as f32))
                .unzip()
        }
        BatchNormMode::Eval => {
            let rm = running_mean.data();
            let rv = running_var.data();
            (
                rm.clone(),
                rv.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect(),
            )
        }
    };

    let g = gamma.data();
    let b = beta.data();
    let mut xhat = vec![0.0f32; x.len()];
    let mut out = vec![0.0f32; x.len()];
    xhat.par_chunks_mut(plane)
        .zip(out.par_chunks_mut(plane))
        .enumerate()
        .for_each(|(p, (xh, o))| {
            let ch = p % c;
            let src = &x[p * plane..(p + 1) * plane];
            for ((xh, o), &v) in xh.iter_mut().zip(o.iter_mut()).zip(src) {
                *xh = (v - mean[ch]) * inv_std[ch];
                *o = g[ch] * *xh + b[ch];
            }
        });
    drop((x, g, b));

    Ok(Tensor::from_op(
        vec![n, c, h, w],
        out,
        &[input, gamma, beta],
        BatchNormBackward {
            xhat,
            inv_std,
            channels: c,
            plane,
            count,
            batch_stats: mode == BatchNormMode::Train,
        },
    ))
}

struct BatchNormBackward {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    channels: usize,
    plane: usize,
    count: usize,
    batch_stats: bool,
}

impl BackwardOp for BatchNormBackward {
    fn name(&self) -> &'static str {
        "batch_norm2d"
    }

    fn backward(&self, grad_out: &[f32], inputs: &[Tensor]) -> Result<Vec<Option<Vec<f32>>>> {
        let c = self.channels;
        let plane = self.plane;
        let n = self.count / plane;
        let sums: Vec<(f64, f64)> = (0..c)
            .into_par_iter()
            .map(|ch| {
                let (mut db, mut dg) = (0.0f64, 0.0f64);
                for s in 0..n {
                    let start = (s * c + ch) * plane;
                    for (&gy, &xh) in grad_out[start..start + plane]
                        .iter()
                        .zip(&self.xhat[start..start + plane])
                    {
                        db += gy as f64;
                        dg += (gy * xh) as f64;
                    }
                }
                (db, dg)
            })
            .collect();

        let dx = inputs[0].requires_grad().then(|| {
            let gamma = inputs[1].data();
            let m = self.count as f32;
            let mut dx = vec![0.0f32; grad_out.len()];
            dx.par_chunks_mut(plane).enumerate().for_each(|(p, d)| {
                let ch = p % c;
                let scale = gamma[ch] * self.inv_std[ch];
                let range = p * plane..(p + 1) * plane;
                let gy = &grad_out[range.clone()];
                if self.batch_stats {
                    let (db, dg) = (sums[ch].0 as f32, sums[ch].1 as f32);
                    let xh = &self.xhat[range];
                    for ((d, &g), &x) in d.iter_mut().zip(gy).zip(xh) {
                        *d = scale / m * (m * g - db - x * dg);
                    }
                } else {
                    for (d, &g) in d.iter_mut().zip(gy) {
                        *d = scale * g;
                    }
                }
            });
            dx
        });
        let dgamma = inputs[1]
            .requires_grad()
            .then(|| sums.iter().map(|s| s.1 as f32).collect());
        let dbeta = inputs[2]
            .requires_grad()
            .then(|| sums.iter().map(|s| s.0 as f32).collect());
        Ok(vec![dx, dgamma, dbeta])
    }
}
