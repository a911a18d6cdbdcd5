use rayon::prelude::*;

use super::gemm::gemm;
use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Tensor};

/// Per-sample `(weight grad, input grad)`, either absent when not needed.
type SampleGrads = (Option<Vec<f32>>, Option<Vec<f32>>);

/// Geometry of a cross-correlation from a `c×h×w` image to a `ho×wo` grid.
#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn col_len(&self) -> usize {
        self.col_rows() * self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Input coordinate hit by output index `o` and kernel tap `t`, if inside.
#[inline]
fn source_index(o: usize, t: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
    let i = (o * stride + t).checked_sub(pad)?;
    (i < extent).then_some(i)
}

/// Rows of `cols` are `(channel, kh, kw)` and columns are output positions.
fn im2col(x: &[f32], g: &Geom, cols: &mut [f32]) {
    let hw = g.ho * g.wo;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for kh in 0..g.k {
            for kw in 0..g.k {
                let row = ((ci * g.k + kh) * g.k + kw) * hw;
                let dst = &mut cols[row..row + hw];
                for oh in 0..g.ho {
                    let line = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    let Some(ih) = source_index(oh, kh, g.stride, g.pad, g.h) else {
                        line.fill(0.0);
                        continue;
                    };
                    let src = &plane[ih * g.w..(ih + 1) * g.w];
                    for (ow, v) in line.iter_mut().enumerate() {
                        *v = match source_index(ow, kw, g.stride, g.pad, g.w) {
                            Some(iw) => src[iw],
                            None => 0.0,
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, summing overlaps. `x` is
/// overwritten.
fn col2im(cols: &[f32], g: &Geom, x: &mut [f32]) {
    x.fill(0.0);
    let hw = g.ho * g.wo;
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for kh in 0..g.k {
            for kw in 0..g.k {
                let row = ((ci * g.k + kh) * g.k + kw) * hw;
                let src = &cols[row..row + hw];
                for oh in 0..g.ho {
                    let Some(ih) = source_index(oh, kh, g.stride, g.pad, g.h) else {
                        continue;
                    };
                    let dst = &mut plane[ih * g.w..(ih + 1) * g.w];
                    for ow in 0..g.wo {
                        if let Some(iw) = source_index(ow, kw, g.stride, g.pad, g.w) {
                            dst[iw] += src[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Output extent of a convolution, or `None` when the kernel does not fit.
pub fn conv_output_size(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < k {
        return None;
    }
    Some((input + 2 * pad - k) / stride + 1)
}

/// Output extent of a transposed convolution, or `None` if non-positive.
pub fn conv_transpose_output_size(
    input: usize,
    k: usize,
    stride: usize,
    pad: usize,
    output_padding: usize,
) -> Option<usize> {
    ((input - 1) * stride + k + output_padding)
        .checked_sub(2 * pad)
        .filter(|&s| s > 0)
}

fn square_kernel(weight: &Tensor) -> Result<(usize, usize, usize)> {
    let (a, b, kh, kw) = weight.dims4()?;
    if kh != kw {
        return Err(Error::Shape(format!("only square kernels are supported, got {kh}×{kw}")));
    }
    Ok((a, b, kh))
}

fn check_bias(bias: Option<&Tensor>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [channels] => Err(Error::Shape(format!(
            "bias shape {:?} does not match {channels} output channels",
            b.shape()
        ))),
        _ => Ok(()),
    }
}

fn add_bias(out: &mut [f32], bias: &[f32], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad(grad_out: &[f32], n: usize, channels: usize, plane: usize) -> Vec<f32> {
    let mut db = vec![0.0f32; channels];
    for s in 0..n {
        for (c, acc) in db.iter_mut().enumerate() {
            let start = (s * channels + c) * plane;
            *acc += grad_out[start..start + plane].iter().sum::<f32>();
        }
    }
    db
}

/// Sums per-sample partial weight gradients in batch order.
fn reduce_in_order(parts: Vec<Vec<f32>>, len: usize) -> Vec<f32> {
    let mut total = vec![0.0f32; len];
    for p in parts {
        total.iter_mut().zip(&p).for_each(|(a, b)| *a += *b);
    }
    total
}

/// 2-D cross-correlation with zero padding.
///
/// `input` is `N×Cin×H×W`, `weight` is `Cout×Cin×k×k`, `bias` is `Cout`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (n, cin, h, w) = input.dims4()?;
    let (cout, wcin, k) = square_kernel(weight)?;
    if wcin != cin {
        return Err(Error::Shape(format!(
            "conv2d: input has {cin} channels but weight expects {wcin}"
        )));
    }
    check_bias(bias, cout)?;
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d: stride must be positive".into()));
    }
    let (Some(ho), Some(wo)) = (
        conv_output_size(h, k, stride, padding),
        conv_output_size(w, k, stride, padding),
    ) else {
        return Err(Error::Shape(format!(
            "conv2d: kernel {k} larger than padded input {}×{}",
            h + 2 * padding,
            w + 2 * padding
        )));
    };
    let g = Geom {
        c: cin,
        h,
        w,
        k,
        stride,
        pad: padding,
        ho,
        wo,
    };
    let hw = ho * wo;
    let mut out = vec![0.0f32; n * cout * hw];
    {
        let x = input.data();
        let wt = weight.data();
        let b = bias.map(|b| b.data());
        out.par_chunks_mut(cout * hw).enumerate().for_each_init(
            || vec![0.0f32; if g.is_pointwise() { 0 } else { g.col_len() }],
            |cols, (s, out_s)| {
                let xs = &x[s * cin * h * w..(s + 1) * cin * h * w];
                let cols: &[f32] = if g.is_pointwise() {
                    xs
                } else {
                    im2col(xs, &g, cols);
                    cols
                };
                gemm(cout, g.col_rows(), hw, &wt, false, cols, false, out_s, false);
                if let Some(b) = b.as_ref() {
                    add_bias(out_s, b, hw);
                }
            },
        );
    }
    let mut inputs = vec![input, weight];
    inputs.extend(bias);
    Ok(Tensor::from_op(
        vec![n, cout, ho, wo],
        out,
        &inputs,
        ConvBackward { g, n, cout },
    ))
}

struct ConvBackward {
    g: Geom,
    n: usize,
    cout: usize,
}

impl BackwardOp for ConvBackward {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, grad_out: &[f32], inputs: &[Tensor]) -> Result<Vec<Option<Vec<f32>>>> {
        let g = self.g;
        let (x_t, w_t) = (&inputs[0], &inputs[1]);
        let need_x = x_t.requires_grad();
        let need_w = w_t.requires_grad();
        let hw = g.ho * g.wo;
        let in_len = g.c * g.h * g.w;
        let ckk = g.col_rows();

        let x = x_t.data();
        let wt = w_t.data();
        let parts: Vec<SampleGrads> = (0..self.n)
            .into_par_iter()
            .map(|s| {
                let dout = &grad_out[s * self.cout * hw..(s + 1) * self.cout * hw];
                let dw = need_w.then(|| {
                    let xs = &x[s * in_len..(s + 1) * in_len];
                    let mut dw = vec![0.0f32; self.cout * ckk];
                    if g.is_pointwise() {
                        gemm(self.cout, hw, ckk, dout, false, xs, true, &mut dw, false);
                    } else {
                        let mut cols = vec![0.0f32; g.col_len()];
                        im2col(xs, &g, &mut cols);
                        gemm(self.cout, hw, ckk, dout, false, &cols, true, &mut dw, false);
                    }
                    dw
                });
                let dx = need_x.then(|| {
                    let mut dx = vec![0.0f32; in_len];
                    if g.is_pointwise() {
                        gemm(ckk, self.cout, hw, &wt, true, dout, false, &mut dx, false);
                    } else {
                        let mut dcols = vec![0.0f32; g.col_len()];
                        gemm(ckk, self.cout, hw, &wt, true, dout, false, &mut dcols, false);
                        col2im(&dcols, &g, &mut dx);
                    }
                    dx
                });
                (dx, dw)
            })
            .collect();

        let (dxs, dws): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        let dx = need_x.then(|| dxs.into_iter().flatten().flatten().collect());
        let dw = need_w.then(|| reduce_in_order(dws.into_iter().flatten().collect(), self.cout * ckk));
        let mut grads = vec![dx, dw];
        if let Some(b) = inputs.get(2) {
            grads.push(b.requires_grad().then(|| bias_grad(grad_out, self.n, self.cout, hw)));
        }
        Ok(grads)
    }
}

/// Transposed convolution: the input-gradient of [`conv2d`] with the same
/// geometry, run forward.
///
/// `input` is `N×Cin×H×W`, `weight` is `Cin×Cout×k×k`. Output extent is
/// `(H−1)·stride − 2·padding + k + output_padding`.
pub fn conv_transpose2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor> {
    let (n, cin, h, w) = input.dims4()?;
    let (wcin, cout, k) = square_kernel(weight)?;
    if wcin != cin {
        return Err(Error::Shape(format!(
            "conv_transpose2d: input has {cin} channels but weight expects {wcin}"
        )));
    }
    check_bias(bias, cout)?;
    if stride == 0 {
        return Err(Error::InvalidArgument("conv_transpose2d: stride must be positive".into()));
    }
    if output_padding >= stride {
        return Err(Error::InvalidArgument(format!(
            "conv_transpose2d: output_padding {output_padding} must be smaller than stride {stride}"
        )));
    }
    let (Some(oh), Some(ow)) = (
        conv_transpose_output_size(h, k, stride, padding, output_padding),
        conv_transpose_output_size(w, k, stride, padding, output_padding),
    ) else {
        return Err(Error::Shape(format!(
            "conv_transpose2d: padding {padding} leaves no output for a {h}×{w} input"
        )));
    };
    let g = Geom {
        c: cout,
        h: oh,
        w: ow,
        k,
        stride,
        pad: padding,
        ho: h,
        wo: w,
    };
    let hw = h * w;
    let out_plane = oh * ow;
    let ckk = g.col_rows();
    let mut out = vec![0.0f32; n * cout * out_plane];
    {
        let x = input.data();
        let wt = weight.data();
        let b = bias.map(|b| b.data());
        out.par_chunks_mut(cout * out_plane).enumerate().for_each_init(
            || vec![0.0f32; g.col_len()],
            |cols, (s, out_s)| {
                let xs = &x[s * cin * hw..(s + 1) * cin * hw];
                if g.is_pointwise() {
                    gemm(ckk, cin, hw, &wt, true, xs, false, out_s, false);
                } else {
                    gemm(ckk, cin, hw, &wt, true, xs, false, cols, false);
                    col2im(cols, &g, out_s);
                }
                if let Some(b) = b.as_ref() {
                    add_bias(out_s, b, out_plane);
                }
            },
        );
    }
    let mut inputs = vec![input, weight];
    inputs.extend(bias);
    Ok(Tensor::from_op(
        vec![n, cout, oh, ow],
        out,
        &inputs,
        ConvTransposeBackward { g, n, cin },
    ))
}

struct ConvTransposeBackward {
    g: Geom,
    n: usize,
    cin: usize,
}

impl BackwardOp for ConvTransposeBackward {
    fn name(&self) -> &'static str {
        "conv_transpose2d"
    }

    fn backward(&self, grad_out: &[f32], inputs: &[Tensor]) -> Result<Vec<Option<Vec<f32>>>> {
        let g = self.g;
        let (x_t, w_t) = (&inputs[0], &inputs[1]);
        let need_x = x_t.requires_grad();
        let need_w = w_t.requires_grad();
        let hw = g.ho * g.wo;
        let out_len = g.c * g.h * g.w;
        let ckk = g.col_rows();

        let x = x_t.data();
        let wt = w_t.data();
        let parts: Vec<SampleGrads> = (0..self.n)
            .into_par_iter()
            .map(|s| {
                let dy = &grad_out[s * out_len..(s + 1) * out_len];
                let owned;
                let cols: &[f32] = if g.is_pointwise() {
                    dy
                } else {
                    let mut c = vec![0.0f32; g.col_len()];
                    im2col(dy, &g, &mut c);
                    owned = c;
                    &owned
                };
                let dx = need_x.then(|| {
                    let mut dx = vec![0.0f32; self.cin * hw];
                    gemm(self.cin, ckk, hw, &wt, false, cols, false, &mut dx, false);
                    dx
                });
                let dw = need_w.then(|| {
                    let xs = &x[s * self.cin * hw..(s + 1) * self.cin * hw];
                    let mut dw = vec![0.0f32; self.cin * ckk];
                    gemm(self.cin, hw, ckk, xs, false, cols, true, &mut dw, false);
                    dw
                });
                (dx, dw)
            })
            .collect();

        let (dxs, dws): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        let dx = need_x.then(|| dxs.into_iter().flatten().flatten().collect());
        let dw = need_w.then(|| reduce_in_order(dws.into_iter().flatten().collect(), self.cin * ckk));
        let mut grads = vec![dx, dw];
        if let Some(b) = inputs.get(2) {
            grads.push(b.requires_grad().then(|| bias_grad(grad_out, self.n, g.c, g.h * g.w)));
        }
        Ok(grads)
    }
}
