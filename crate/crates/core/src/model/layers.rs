use crate::error::Result;
use crate::ops::{self, BatchNormMode};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Name → tensor table shared by parameter and buffer registries.
pub(crate) type Registry = Vec<(String, Tensor)>;

fn he_normal(rng: Option<&mut Rng>, shape: &[usize], fan_in: usize) -> Result<Tensor> {
    let len = shape.iter().product();
    let data = match rng {
        Some(rng) => rng.normal_vec(len, (2.0 / fan_in.max(1) as f32).sqrt()),
        None => vec![0.0; len],
    };
    Tensor::param(shape, data)
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// He-normal weights (fan-in `cin·k²`), zero bias. With `rng = None` the
    /// weights are zero, which is only useful before importing a state.
    pub(crate) fn new(
        rng: Option<&mut Rng>,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        Ok(Conv2d {
            weight: he_normal(rng, &[cout, cin, k, k], cin * k * k)?,
            bias: Some(Tensor::param(&[cout], vec![0.0; cout])?),
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::conv2d(x, &self.weight, self.bias.as_ref(), self.stride, self.padding)
    }

    pub(crate) fn register(&self, prefix: &str, params: &mut Registry) {
        params.push((format!("{prefix}.weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            params.push((format!("{prefix}.bias"), b.clone()));
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl ConvTranspose2d {
    /// He-normal weights with fan-in `cin·k²/stride²`, the number of input
    /// taps that reach one output pixel.
    pub(crate) fn new(
        rng: Option<&mut Rng>,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Self> {
        let fan_in = (cin * k * k / (stride * stride)).max(1);
        Ok(ConvTranspose2d {
            weight: he_normal(rng, &[cin, cout, k, k], fan_in)?,
            bias: Some(Tensor::param(&[cout], vec![0.0; cout])?),
            stride,
            padding,
            output_padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::conv_transpose2d(
            x,
            &self.weight,
            self.bias.as_ref(),
            self.stride,
            self.padding,
            self.output_padding,
        )
    }

    pub(crate) fn register(&self, prefix: &str, params: &mut Registry) {
        params.push((format!("{prefix}.weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            params.push((format!("{prefix}.bias"), b.clone()));
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f32,
    pub momentum: f32,
}

impl BatchNorm2d {
    pub const EPS: f32 = 1e-5;
    pub const MOMENTUM: f32 = 0.1;

    pub(crate) fn new(c: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: Tensor::param(&[c], vec![1.0; c])?,
            beta: Tensor::param(&[c], vec![0.0; c])?,
            running_mean: Tensor::zeros(&[c]),
            running_var: Tensor::full(&[c], 1.0),
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: BatchNormMode) -> Result<Tensor> {
        ops::batch_norm2d(
            x,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            mode,
            self.eps,
            self.momentum,
        )
    }

    pub(crate) fn register(&self, prefix: &str, params: &mut Registry, buffers: &mut Registry) {
        params.push((format!("{prefix}.gamma"), self.gamma.clone()));
        params.push((format!("{prefix}.beta"), self.beta.clone()));
        buffers.push((format!("{prefix}.running_mean"), self.running_mean.clone()));
        buffers.push((format!("{prefix}.running_var"), self.running_var.clone()));
    }
}
