//! The grain segmentation network: a ResNet-18 encoder feeding a
//! LinkNet-style decoder through additive skip links, ending in a
//! single-channel sigmoid probability map.

mod checkpoint;
mod dsgsn;
mod layers;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::BatchNormMode;

pub use checkpoint::{load_checkpoint, read_checkpoint_config, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dsgsn::{build_model, param_count, Dsgsn, ForwardTrace, LayerGroup, SkipLinks};
pub use layers::{BatchNorm2d, Conv2d, ConvTranspose2d};

/// Spatial input sizes must be multiples of this (five stride-2 stages).
pub const INPUT_SIZE_DIVISOR: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Output widths of the four encoder stages.
    pub stage_widths: [usize; 4],
    /// Residual basic blocks per encoder stage.
    pub blocks_per_stage: usize,
    pub out_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: 3,
            stage_widths: [64, 128, 256, 512],
            blocks_per_stage: 2,
            out_channels: 1,
        }
    }
}

impl ModelConfig {
    /// Desk-scale network used by the tests and quick experiments.
    pub fn tiny() -> Self {
        ModelConfig {
            stage_widths: [8, 16, 32, 64],
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.out_channels == 0 || self.blocks_per_stage == 0 {
            return Err(Error::InvalidArgument(format!(
                "model config: input_channels, out_channels and blocks_per_stage must be positive: {self:?}"
            )));
        }
        if self.stage_widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "model config: stage widths must be positive, got {:?}",
                self.stage_widths
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

impl From<Mode> for BatchNormMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Train => BatchNormMode::Train,
            Mode::Eval => BatchNormMode::Eval,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Train => "train",
            Mode::Eval => "eval",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Mode::Train),
            "eval" => Ok(Mode::Eval),
            _ => Err(Error::InvalidArgument(format!("unknown mode `{s}`"))),
        }
    }
}
