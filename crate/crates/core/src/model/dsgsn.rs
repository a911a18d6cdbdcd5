use super::layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Registry};
use super::{Mode, ModelConfig, INPUT_SIZE_DIVISOR};
use crate::error::{Error, Result};
use crate::ops::{self, BatchNormMode};
use crate::rng::Rng;
use crate::tensor::{no_grad, Tensor};

/// ResNet basic block: two 3×3 conv+BN with an additive shortcut. The
/// shortcut is a strided 1×1 conv+BN projection whenever the block changes
/// resolution or width, identity otherwise.
#[derive(Debug)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    projection: Option<(Conv2d, BatchNorm2d)>,
}

impl BasicBlock {
    fn new(rng: &mut Option<&mut Rng>, cin: usize, cout: usize, stride: usize) -> Result<Self> {
        let conv1 = Conv2d::new(rng.as_deref_mut(), cin, cout, 3, stride, 1)?;
        let bn1 = BatchNorm2d::new(cout)?;
        let conv2 = Conv2d::new(rng.as_deref_mut(), cout, cout, 3, 1, 1)?;
        let bn2 = BatchNorm2d::new(cout)?;
        let projection = if stride != 1 || cin != cout {
            Some((
                Conv2d::new(rng.as_deref_mut(), cin, cout, 1, stride, 0)?,
                BatchNorm2d::new(cout)?,
            ))
        } else {
            None
        };
        Ok(BasicBlock {
            conv1,
            bn1,
            conv2,
            bn2,
            projection,
        })
    }

    fn forward(&self, x: &Tensor, mode: BatchNormMode) -> Result<Tensor> {
        let y = ops::relu(&self.bn1.forward(&self.conv1.forward(x)?, mode)?);
        let y = self.bn2.forward(&self.conv2.forward(&y)?, mode)?;
        let shortcut = match &self.projection {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, mode)?,
            None => x.clone(),
        };
        Ok(ops::relu(&ops::add(&y, &shortcut)?))
    }

    fn register(&self, prefix: &str, params: &mut Registry, buffers: &mut Registry) {
        self.conv1.register(&format!("{prefix}.conv1"), params);
        self.bn1.register(&format!("{prefix}.bn1"), params, buffers);
        self.conv2.register(&format!("{prefix}.conv2"), params);
        self.bn2.register(&format!("{prefix}.bn2"), params, buffers);
        if let Some((conv, bn)) = &self.projection {
            conv.register(&format!("{prefix}.projection.conv"), params);
            bn.register(&format!("{prefix}.projection.bn"), params, buffers);
        }
    }
}

/// 1×1 reduce to `m/4`, 3×3 stride-2 transposed conv, 1×1 expand to `n`,
/// each followed by BN and ReLU.
#[derive(Debug)]
struct DecoderBlock {
    reduce: Conv2d,
    bn1: BatchNorm2d,
    upsample: ConvTranspose2d,
    bn2: BatchNorm2d,
    expand: Conv2d,
    bn3: BatchNorm2d,
}

impl DecoderBlock {
    fn new(rng: &mut Option<&mut Rng>, m: usize, n: usize) -> Result<Self> {
        let q = (m / 4).max(1);
        Ok(DecoderBlock {
            reduce: Conv2d::new(rng.as_deref_mut(), m, q, 1, 1, 0)?,
            bn1: BatchNorm2d::new(q)?,
            upsample: ConvTranspose2d::new(rng.as_deref_mut(), q, q, 3, 2, 1, 1)?,
            bn2: BatchNorm2d::new(q)?,
            expand: Conv2d::new(rng.as_deref_mut(), q, n, 1, 1, 0)?,
            bn3: BatchNorm2d::new(n)?,
        })
    }

    fn forward(&self, x: &Tensor, mode: BatchNormMode) -> Result<Tensor> {
        let y = ops::relu(&self.bn1.forward(&self.reduce.forward(x)?, mode)?);
        let y = ops::relu(&self.bn2.forward(&self.upsample.forward(&y)?, mode)?);
        Ok(ops::relu(&self.bn3.forward(&self.expand.forward(&y)?, mode)?))
    }

    fn register(&self, prefix: &str, params: &mut Registry, buffers: &mut Registry) {
        self.reduce.register(&format!("{prefix}.reduce"), params);
        self.bn1.register(&format!("{prefix}.bn1"), params, buffers);
        self.upsample.register(&format!("{prefix}.upsample"), params);
        self.bn2.register(&format!("{prefix}.bn2"), params, buffers);
        self.expand.register(&format!("{prefix}.expand"), params);
        self.bn3.register(&format!("{prefix}.bn3"), params, buffers);
    }
}

/// Classifier head at half resolution: 3×3 transposed conv and 3×3 conv
/// (both keeping size, BN+ReLU), then a 2×2 stride-2 transposed conv back to
/// input resolution and a sigmoid.
#[derive(Debug)]
struct FinalBlock {
    deconv1: ConvTranspose2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    deconv3: ConvTranspose2d,
}

impl FinalBlock {
    fn new(rng: &mut Option<&mut Rng>, cin: usize, out: usize) -> Result<Self> {
        let mid = (cin / 2).max(1);
        Ok(FinalBlock {
            deconv1: ConvTranspose2d::new(rng.as_deref_mut(), cin, mid, 3, 1, 1, 0)?,
            bn1: BatchNorm2d::new(mid)?,
            conv2: Conv2d::new(rng.as_deref_mut(), mid, mid, 3, 1, 1)?,
            bn2: BatchNorm2d::new(mid)?,
            deconv3: ConvTranspose2d::new(rng.as_deref_mut(), mid, out, 2, 2, 0, 0)?,
        })
    }

    fn forward(&self, x: &Tensor, mode: BatchNormMode) -> Result<Tensor> {
        let y = ops::relu(&self.bn1.forward(&self.deconv1.forward(x)?, mode)?);
        let y = ops::relu(&self.bn2.forward(&self.conv2.forward(&y)?, mode)?);
        Ok(ops::sigmoid(&self.deconv3.forward(&y)?))
    }

    fn register(&self, prefix: &str, params: &mut Registry, buffers: &mut Registry) {
        self.deconv1.register(&format!("{prefix}.deconv1"), params);
        self.bn1.register(&format!("{prefix}.bn1"), params, buffers);
        self.conv2.register(&format!("{prefix}.conv2"), params);
        self.bn2.register(&format!("{prefix}.bn2"), params, buffers);
        self.deconv3.register(&format!("{prefix}.deconv3"), params);
    }
}

/// Which encoder→decoder skip additions are active, indexed by encoder
/// stage 1..=3 (stage 4 feeds decoder 4 directly).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SkipLinks(pub [bool; 3]);

impl Default for SkipLinks {
    fn default() -> Self {
        SkipLinks([true; 3])
    }
}

/// Intermediate activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Outputs of encoder stages 1..=4.
    pub encoder: Vec<Tensor>,
    /// Inputs of decoder blocks 1..=4.
    pub decoder_inputs: Vec<Tensor>,
    pub output: Tensor,
}

/// Parameter count of a top-level layer group (`stem`, `encoder2`, ...).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerGroup {
    pub name: String,
    pub tensors: usize,
    pub params: usize,
}

/// Not `Clone`: the layers hold tensor handles, so a copy would alias the
/// same parameters.
#[derive(Debug)]
pub struct Dsgsn {
    config: ModelConfig,
    mode: Mode,
    stem_conv: Conv2d,
    stem_bn: BatchNorm2d,
    stages: Vec<Vec<BasicBlock>>,
    /// `decoders[i]` is decoder block `i + 1`.
    decoders: Vec<DecoderBlock>,
    head: FinalBlock,
    params: Registry,
    buffers: Registry,
}

/// Builds a freshly initialized network.
pub fn build_model(config: &ModelConfig, rng: &mut Rng) -> Result<Dsgsn> {
    Dsgsn::new(config, rng)
}

pub fn param_count(model: &Dsgsn) -> usize {
    model.param_count()
}

impl Dsgsn {
    pub fn new(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        Self::construct(config, Some(rng))
    }

    /// Same graph with all conv weights zero; for loading saved states.
    pub fn zeroed(config: &ModelConfig) -> Result<Self> {
        Self::construct(config, None)
    }

    fn construct(config: &ModelConfig, rng: Option<&mut Rng>) -> Result<Self> {
        config.validate()?;
        let mut rng = rng;
        let w = config.stage_widths;
        let stem_conv = Conv2d::new(rng.as_deref_mut(), config.input_channels, w[0], 7, 2, 3)?;
        let stem_bn = BatchNorm2d::new(w[0])?;

        let mut stages = Vec::with_capacity(4);
        let mut cin = w[0];
        for (i, &cout) in w.iter().enumerate() {
            let mut blocks = Vec::with_capacity(config.blocks_per_stage);
            for b in 0..config.blocks_per_stage {
                let stride = if i > 0 && b == 0 { 2 } else { 1 };
                let block_in = if b == 0 { cin } else { cout };
                blocks.push(BasicBlock::new(&mut rng, block_in, cout, stride)?);
            }
            stages.push(blocks);
            cin = cout;
        }

        // Built deepest first so initialization follows the data path.
        let mut decoders = Vec::with_capacity(4);
        for i in (0..4).rev() {
            let n = if i == 0 { w[0] } else { w[i - 1] };
            decoders.push(DecoderBlock::new(&mut rng, w[i], n)?);
        }
        decoders.reverse();
        let head = FinalBlock::new(&mut rng, w[0], config.out_channels)?;

        let mut model = Dsgsn {
            config: config.clone(),
            mode: Mode::Train,
            stem_conv,
            stem_bn,
            stages,
            decoders,
            head,
            params: Vec::new(),
            buffers: Vec::new(),
        };
        model.rebuild_registry();
        Ok(model)
    }

    fn rebuild_registry(&mut self) {
        let (mut p, mut b) = (Vec::new(), Vec::new());
        self.stem_conv.register("stem.conv", &mut p);
        self.stem_bn.register("stem.bn", &mut p, &mut b);
        for (i, stage) in self.stages.iter().enumerate() {
            for (j, block) in stage.iter().enumerate() {
                block.register(&format!("encoder{}.{j}", i + 1), &mut p, &mut b);
            }
        }
        for (i, d) in self.decoders.iter().enumerate().rev() {
            d.register(&format!("decoder{}", i + 1), &mut p, &mut b);
        }
        self.head.register("final", &mut p, &mut b);
        self.params = p;
        self.buffers = b;
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Trainable tensors in a fixed order.
    pub fn parameters(&self) -> &[(String, Tensor)] {
        &self.params
    }

    /// BN running statistics.
    pub fn buffers(&self) -> &[(String, Tensor)] {
        &self.buffers
    }

    /// Parameters followed by buffers: everything a checkpoint stores.
    pub fn state(&self) -> impl Iterator<Item = &(String, Tensor)> {
        self.params.iter().chain(&self.buffers)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Running-stat momentum of every BN layer. `1.0` makes one train-mode
    /// pass copy the batch statistics into the running buffers.
    pub fn set_bn_momentum(&mut self, momentum: f32) {
        self.stem_bn.momentum = momentum;
        for block in self.stages.iter_mut().flatten() {
            block.bn1.momentum = momentum;
            block.bn2.momentum = momentum;
            if let Some((_, bn)) = &mut block.projection {
                bn.momentum = momentum;
            }
        }
        for d in &mut self.decoders {
            for bn in [&mut d.bn1, &mut d.bn2, &mut d.bn3] {
                bn.momentum = momentum;
            }
        }
        self.head.bn1.momentum = momentum;
        self.head.bn2.momentum = momentum;
    }

    pub fn zero_grad(&self) {
        for (_, t) in &self.params {
            t.zero_grad();
        }
    }

    /// Overwrites one state tensor. Hook for importing external weights.
    pub fn import_tensor(&self, name: &str, shape: &[usize], values: &[f32]) -> Result<()> {
        let (_, t) = self
            .state()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        if t.shape() != shape {
            return Err(Error::ParamShapeMismatch {
                name: name.to_string(),
                expected: t.shape().to_vec(),
                found: shape.to_vec(),
            });
        }
        t.set_data(values)
    }

    pub fn layer_groups(&self) -> Vec<LayerGroup> {
        let mut groups: Vec<LayerGroup> = Vec::new();
        for (name, t) in &self.params {
            let group = name.split('.').next().unwrap_or(name);
            match groups.last_mut() {
                Some(g) if g.name == group => {
                    g.tensors += 1;
                    g.params += t.numel();
                }
                _ => groups.push(LayerGroup {
                    name: group.to_string(),
                    tensors: 1,
                    params: t.numel(),
                }),
            }
        }
        groups
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.config.input_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {c}",
                self.config.input_channels
            )));
        }
        for (dim, value) in [("H", h), ("W", w)] {
            if value % INPUT_SIZE_DIVISOR != 0 {
                return Err(Error::InputSize {
                    dim,
                    value,
                    divisor: INPUT_SIZE_DIVISOR,
                });
            }
        }
        Ok(())
    }

    /// Probability map `N×out×H×W` using the model's current mode.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_with(x, self.mode)
    }

    pub fn forward_with(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.trace(x, mode, SkipLinks::default())?.output)
    }

    /// Eval-mode forward without recording a graph.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let _guard = no_grad();
        self.forward_with(x, Mode::Eval)
    }

    /// Forward pass that keeps the encoder outputs and decoder inputs.
    pub fn trace(&self, x: &Tensor, mode: Mode, skips: SkipLinks) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let bn = BatchNormMode::from(mode);
        let y = ops::relu(&self.stem_bn.forward(&self.stem_conv.forward(x)?, bn)?);
        let mut y = ops::max_pool2d(&y, 3, 2, 1)?;

        let mut encoder = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in stage {
                y = block.forward(&y, bn)?;
            }
            encoder.push(y.clone());
        }

        let mut decoder_inputs = vec![encoder[3].clone()];
        let mut d = self.decoders[3].forward(&encoder[3], bn)?;
        for i in (0..3).rev() {
            let input = if skips.0[i] {
                ops::add(&d, &encoder[i])?
            } else {
                d
            };
            d = self.decoders[i].forward(&input, bn)?;
            decoder_inputs.push(input);
        }
        decoder_inputs.reverse();
        let output = self.head.forward(&d, bn)?;
        Ok(ForwardTrace {
            encoder,
            decoder_inputs,
            output,
        })
    }
}
