//! Grain/matrix segmentation for sandstone photomicrographs.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`] and [`ops`]: a small reverse-mode autodiff core over `f32`
//!   NCHW tensors with exactly the kernels the network needs.
//! * [`model`]: the LinkNet-style encoder-decoder with a ResNet-18 encoder,
//!   parameter accounting and a binary checkpoint format.
//! * [`loss`] and [`metrics`]: class-weighted binary cross-entropy and the
//!   pixel-level evaluation measures with per-image aggregation.
//! * [`data`]: PPL/XPL pair handling, tile planning, the training/test set
//!   schemes, stitching, PNG I/O and a synthetic thin-section generator.
//! * [`train`]: optimizers, the step learning-rate schedule, the training
//!   loop, tiled evaluation and ablation drivers.

pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use image;
pub use rng::Rng;
pub use tensor::{no_grad, Tensor};

pub use data::{DatasetScheme, ImagePair, Sample, TilePlan};
pub use loss::{ClassWeights, WeightMode};
pub use metrics::{ConfusionCounts, MetricsReport, SegmentationMetrics};
pub use model::{Dsgsn, Mode, ModelConfig};
pub use train::{TrainConfig, TrainLog};
