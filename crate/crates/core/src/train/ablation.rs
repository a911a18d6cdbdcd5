//! Training-set and loss-mode ablations: one model per arm, identical
//! initialization and schedule, scored on the same test images.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate_model, init_model, train, EpochLog, TrainConfig};
use crate::data::io::{read_prepared, MANIFEST_FILE};
use crate::data::{DatasetScheme, ImagePair, Sample};
use crate::error::{Error, Result};
use crate::loss::WeightMode;
use crate::metrics::{Aggregate, MetricsReport};
use crate::model::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    TrainingSets,
    LossMode,
}

impl std::str::FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "training_sets" => Ok(AblationKind::TrainingSets),
            "loss_mode" => Ok(AblationKind::LossMode),
            _ => Err(Error::InvalidArgument(format!(
                "unknown ablation `{s}` (expected training_sets or loss_mode)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AblationSpec {
    pub kind: AblationKind,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub init_seed: u64,
    /// Arms of a training-set ablation.
    pub schemes: Vec<DatasetScheme>,
    /// The single training set of a loss-mode ablation.
    pub loss_scheme: DatasetScheme,
    pub weight_modes: Vec<WeightMode>,
    pub test_scheme: DatasetScheme,
    pub tile: usize,
    pub eval_batch: usize,
}

impl AblationSpec {
    pub fn new(kind: AblationKind, model: ModelConfig, train: TrainConfig) -> Self {
        AblationSpec {
            kind,
            model,
            train,
            init_seed: 0,
            schemes: DatasetScheme::ALL.iter().copied().filter(|s| !s.is_test()).collect(),
            loss_scheme: DatasetScheme::Set1,
            weight_modes: WeightMode::ALL.to_vec(),
            test_scheme: DatasetScheme::Test2,
            tile: crate::data::DEFAULT_TILE,
            eval_batch: 8,
        }
    }
}

pub struct AblationArm {
    pub name: String,
    pub scheme: DatasetScheme,
    pub samples: Vec<Sample>,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: String,
    pub scheme: DatasetScheme,
    pub weight_mode: WeightMode,
    pub samples: usize,
    pub final_loss: f64,
    pub aggregate: Aggregate,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub kind: AblationKind,
    pub test_scheme: DatasetScheme,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, arm: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.arm == arm)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Trains each arm from the same initialization and evaluates it.
pub fn run_arms(
    spec: &AblationSpec,
    arms: Vec<AblationArm>,
    test_pairs: &[ImagePair],
    mut on_epoch: impl FnMut(&str, &EpochLog),
) -> Result<AblationTable> {
    if arms.is_empty() {
        return Err(Error::InvalidArgument("ablation has no arms".into()));
    }
    let mut rows = Vec::with_capacity(arms.len());
    for arm in arms {
        let mut model = init_model(&spec.model, spec.init_seed)?;
        let log = train(&mut model, &arm.samples, &arm.config, |e| on_epoch(&arm.name, e))?;
        let report = evaluate_model(&model, test_pairs, spec.test_scheme, spec.tile, spec.eval_batch)?;
        rows.push(AblationRow {
            arm: arm.name,
            scheme: arm.scheme,
            weight_mode: arm.config.weight_mode,
            samples: arm.samples.len(),
            final_loss: log.epochs.last().map_or(f64::NAN, |e| e.loss),
            aggregate: report.aggregate,
            report,
        });
    }
    Ok(AblationTable {
        kind: spec.kind,
        test_scheme: spec.test_scheme,
        rows,
    })
}

fn load_arm_samples(data_root: &Path, scheme: DatasetScheme) -> Result<Vec<Sample>> {
    let path = data_root.join(scheme.as_str()).join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::MissingFile {
            id: scheme.as_str().to_string(),
            path,
        });
    }
    Ok(read_prepared(&path)?.1)
}

/// Runs an ablation over prepared datasets laid out as
/// `<data_root>/<scheme>/manifest.json`.
pub fn run_ablation(
    spec: &AblationSpec,
    data_root: &Path,
    test_pairs: &[ImagePair],
    on_epoch: impl FnMut(&str, &EpochLog),
) -> Result<AblationTable> {
    let arms = match spec.kind {
        AblationKind::TrainingSets => spec
            .schemes
            .iter()
            .map(|&scheme| {
                Ok(AblationArm {
                    name: scheme.as_str().to_string(),
                    scheme,
                    samples: load_arm_samples(data_root, scheme)?,
                    config: spec.train.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?,
        AblationKind::LossMode => {
            let samples = load_arm_samples(data_root, spec.loss_scheme)?;
            spec.weight_modes
                .iter()
                .map(|&mode| AblationArm {
                    name: mode.as_str().to_string(),
                    scheme: spec.loss_scheme,
                    samples: samples.clone(),
                    config: TrainConfig {
                        weight_mode: mode,
                        ..spec.train.clone()
                    },
                })
                .collect()
        }
    };
    run_arms(spec, arms, test_pairs, on_epoch)
}
