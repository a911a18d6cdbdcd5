use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Tensor};

/// Max pooling over `k×k` windows. Padded cells act as −∞ and never win; on
/// ties the first cell in row-major window order wins, which also fixes
/// where the gradient is routed.
pub fn max_pool2d(input: &Tensor, k: usize, stride: usize, padding: usize) -> Result<Tensor> {
    if k == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "max_pool2d: kernel ({k}) and stride ({stride}) must be positive"
        )));
    }
    let (n, c, h, w) = input.dims4()?;
    if padding >= k {
        return Err(Error::InvalidArgument(format!(
            "max_pool2d: padding {padding} must be smaller than kernel {k}"
        )));
    }
    let (Some(ho), Some(wo)) = (
        super::conv_output_size(h, k, stride, padding),
        super::conv_output_size(w, k, stride, padding),
    ) else {
        return Err(Error::Shape(format!(
            "max_pool2d: window {k} larger than padded input {}×{}",
            h + 2 * padding,
            w + 2 * padding
        )));
    };

    let planes = n * c;
    let mut out = vec![0.0f32; planes * ho * wo];
    let mut argmax = vec![0u32; planes * ho * wo];
    {
        let x = input.data();
        out.par_chunks_mut(ho * wo)
            .zip(argmax.par_chunks_mut(ho * wo))
            .enumerate()
            .for_each(|(p, (out_p, arg_p))| {
                let plane = &x[p * h * w..(p + 1) * h * w];
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_idx = usize::MAX;
                        for kh in 0..k {
                            let Some(ih) = (oh * stride + kh).checked_sub(padding).filter(|&i| i < h) else {
                                continue;
                            };
                            for kw in 0..k {
                                let Some(iw) = (ow * stride + kw).checked_sub(padding).filter(|&i| i < w)
                                else {
                                    continue;
                                };
                                let v = plane[ih * w + iw];
                                if best_idx == usize::MAX || v > best {
                                    best = v;
                                    best_idx = ih * w + iw;
                                }
                            }
                        }
                        out_p[oh * wo + ow] = best;
                        arg_p[oh * wo + ow] = best_idx as u32;
                    }
                }
            });
    }
    Ok(Tensor::from_op(
        vec![n, c, ho, wo],
        out,
        &[input],
        MaxPoolBackward {
            argmax,
            plane_in: h * w,
            plane_out: ho * wo,
        },
    ))
}

struct MaxPoolBackward {
    argmax: Vec<u32>,
    plane_in: usize,
    plane_out: usize,
}

impl BackwardOp for MaxPoolBackward {
    fn name(&self) -> &'static str {
        "max_pool2d"
    }

    fn backward(&self, grad_out: &[f32], inputs: &[Tensor]) -> Result<Vec<Option<Vec<f32>>>> {
        let mut dx = vec![0.0f32; inputs[0].numel()];
        dx.par_chunks_mut(self.plane_in)
            .zip(grad_out.par_chunks(self.plane_out))
            .zip(self.argmax.par_chunks(self.plane_out))
            .for_each(|((dx_p, g_p), a_p)| {
                for (&g, &a) in g_p.iter().zip(a_p) {
                    dx_p[a as usize] += g;
                }
            });
        Ok(vec![Some(dx)])
    }
}
