//! Training loop, step learning-rate schedule, tiled evaluation and the
//! ablation drivers.

mod ablation;
mod eval;
mod optim;

pub use ablation::{
    run_ablation, run_arms, AblationArm, AblationKind, AblationRow, AblationSpec, AblationTable,
};
pub use eval::{
    evaluate_model, evaluate_samples, predict_image, view_label, ConstantSegmenter, GtPlayback, TileBatch,
    TileSegmenter, PREDICTION_THRESHOLD,
};
pub use optim::{Optimizer, OptimizerKind};

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::loss::{compute_class_weights, weighted_bce, ClassWeights, WeightMode};
use crate::model::{save_checkpoint, Dsgsn, Mode, ModelConfig};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Stream label for model initialization; shuffles use `1 + epoch`.
const INIT_STREAM: u64 = 0;

pub const FINAL_CHECKPOINT: &str = "model.dsgs";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f32,
    pub decay_factor: f32,
    pub decay_every: usize,
    pub optimizer: OptimizerKind,
    pub weight_decay: f32,
    /// Drives the per-epoch shuffle.
    pub seed: u64,
    pub weight_mode: WeightMode,
    pub checkpoint_every: usize,
    /// Where checkpoints go; `None` trains in memory only.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 60,
            lr0: 5e-4,
            decay_factor: 0.1,
            decay_every: 20,
            optimizer: OptimizerKind::ADAM,
            weight_decay: 0.0,
            seed: 0,
            weight_mode: WeightMode::AsWritten,
            checkpoint_every: 20,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("train config: {what}")));
        if self.batch_size == 0 || self.epochs == 0 || self.decay_every == 0 || self.checkpoint_every == 0 {
            return bad("batch_size, epochs, decay_every and checkpoint_every must be positive");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("decay_factor must be in (0, 1]");
        }
        self.optimizer.validate()
    }
}

/// `lr0 · decay_factor^⌊epoch / decay_every⌋` for `0 ≤ epoch < epochs`.
pub fn lr_schedule(config: &TrainConfig, epoch: usize) -> Result<f32> {
    if epoch >= config.epochs {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} outside 0..{}",
            config.epochs
        )));
    }
    let plateaus = (epoch / config.decay_every.max(1)) as i32;
    Ok((config.lr0 as f64 * (config.decay_factor as f64).powi(plateaus)) as f32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Sample-weighted mean of the minibatch losses.
    pub loss: f64,
    pub lr: f32,
    pub steps: usize,
    pub secs: f64,
}

impl EpochLog {
    /// The progress line printed once per epoch.
    pub fn progress_line(&self) -> String {
        format!(
            "epoch={} loss={:.6} lr={:e} secs={:.2}",
            self.epoch, self.loss, self.lr, self.secs
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub optimizer: String,
    pub weights: ClassWeights,
    pub epochs: Vec<EpochLog>,
    pub final_checkpoint: Option<PathBuf>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// A freshly initialized model whose weights depend only on `seed`.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<Dsgsn> {
    Dsgsn::new(config, &mut Rng::derived(seed, INIT_STREAM))
}

/// Stacks samples into an `N×3×T×T` image tensor and `N×1×T×T` target.
pub fn batch_tensors(samples: &[&Sample]) -> Result<(Tensor, Tensor)> {
    let Some(first) = samples.first() else {
        return Err(Error::InvalidArgument("empty batch".into()));
    };
    let t = first.tile;
    if let Some(s) = samples.iter().find(|s| s.tile != t) {
        return Err(Error::Shape(format!(
            "mixed tile sizes in one batch: {t} and {} (`{}`)",
            s.tile, s.source
        )));
    }
    let n = samples.len();
    let mut images = Vec::with_capacity(n * 3 * t * t);
    let mut masks = Vec::with_capacity(n * t * t);
    for s in samples {
        images.extend(s.image.iter().map(|&v| v as f32 / 255.0));
        masks.extend(s.mask.iter().map(|&v| v as f32));
    }
    Ok((Tensor::new(&[n, 3, t, t], images)?, Tensor::new(&[n, 1, t, t], masks)?))
}

/// Trains `model` in place. `on_epoch` sees every epoch row as it completes.
pub fn train(
    model: &mut Dsgsn,
    samples: &[Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainLog> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let weights = compute_class_weights(samples.iter().map(|s| s.mask.as_slice()), config.weight_mode)?;
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    model.set_mode(Mode::Train);
    let params: Vec<Tensor> = model.parameters().iter().map(|(_, t)| t.clone()).collect();
    let mut opt = Optimizer::new(config.optimizer, config.weight_decay, params)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = TrainLog {
        optimizer: config.optimizer.name().to_string(),
        weights,
        epochs: Vec::with_capacity(config.epochs),
        final_checkpoint: None,
    };

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = lr_schedule(config, epoch)?;
        order.sort_unstable();
        Rng::derived(config.seed, 1 + epoch as u64).shuffle(&mut order);

        let mut total = 0.0f64;
        let mut steps = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (x, y) = batch_tensors(&batch)?;
            opt.zero_grad();
            let pred = model.forward(&x)?;
            let loss = weighted_bce(&pred, &y, weights)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "loss diverged to {value} at epoch {epoch}, step {steps}"
                )));
            }
            loss.backward()?;
            opt.step(lr);
            total += value as f64 * chunk.len() as f64;
            steps += 1;
        }

        let row = EpochLog {
            epoch,
            loss: total / samples.len() as f64,
            lr,
            steps,
            secs: start.elapsed().as_secs_f64(),
        };
        on_epoch(&row);
        log.epochs.push(row);

        if let Some(dir) = &config.checkpoint_dir {
            let done = epoch + 1;
            if done % config.checkpoint_every == 0 && done != config.epochs {
                save_checkpoint(model, dir.join(format!("epoch{done:03}.dsgs")))?;
            }
        }
    }

    model.zero_grad();
    if let Some(dir) = &config.checkpoint_dir {
        let path = dir.join(FINAL_CHECKPOINT);
        save_checkpoint(model, &path)?;
        log.final_checkpoint = Some(path);
    }
    Ok(log)
}

/// Convenience for callers that only need the checkpoint path of a run dir.
pub fn final_checkpoint_path(dir: &Path) -> PathBuf {
    dir.join(FINAL_CHECKPOINT)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let c = TrainConfig::default();
        assert_eq!(lr_schedule(&c, 0).unwrap(), 5e-4);
        assert!((lr_schedule(&c, 20).unwrap() / 5e-5 - 1.0).abs() < 1e-6);
        assert!((lr_schedule(&c, 59).unwrap() / 5e-6 - 1.0).abs() < 1e-6);
        assert!(lr_schedule(&c, 60).is_err());
        let lrs: Vec<f32> = (0..60).map(|e| lr_schedule(&c, e).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { decay_factor: 0.0, ..Default::default() },
            TrainConfig { decay_factor: 1.5, ..Default::default() },
            TrainConfig { lr0: -1.0, ..Default::default() },
            TrainConfig { checkpoint_every: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn degenerate_dataset_fails_before_training() {
        let s = Sample {
            source: "x".into(),
            origin: (0, 0),
            tile: 32,
            image: vec![0; 3 * 32 * 32],
            mask: vec![0; 32 * 32],
        };
        let mut model = init_model(&ModelConfig::tiny(), 1).unwrap();
        let before: Vec<f32> = model.parameters()[0].1.to_vec();
        let mut calls = 0;
        let err = train(&mut model, &[s], &TrainConfig::default(), |_| calls += 1).unwrap_err();
        assert!(matches!(err, Error::DegenerateWeights(_)), "{err}");
        assert_eq!(calls, 0);
        assert_eq!(model.parameters()[0].1.to_vec(), before);
    }

    #[test]
    fn batch_rejects_mixed_tiles() {
        let a = Sample { source: "a".into(), origin: (0, 0), tile: 1, image: vec![0; 3], mask: vec![0] };
        let b = Sample { source: "b".into(), origin: (0, 0), tile: 2, image: vec![0; 12], mask: vec![0; 4] };
        assert!(batch_tensors(&[&a, &b]).is_err());
        let (x, y) = batch_tensors(&[&a, &a]).unwrap();
        assert_eq!(x.shape(), &[2, 3, 1, 1]);
        assert_eq!(y.shape(), &[2, 1, 1, 1]);
    }
}
