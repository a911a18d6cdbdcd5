//! `key = value` run configuration.
//!
//! Files hold one setting per line; `#` starts a comment. Keys that the
//! pipeline does not know are rejected with their line number. Command-line
//! settings are applied after the file and win; the resolved file records
//! the effective value of every key and, when a flag replaced a file value,
//! what the file said.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use grainseg_core::data::DEFAULT_TILE;
use grainseg_core::train::{OptimizerKind, TrainConfig};
use grainseg_core::{DatasetScheme, ModelConfig};

pub const RESOLVED_CONFIG: &str = "resolved-config.txt";

/// Every accepted key, in the order the resolved file lists them.
pub const KEYS: &[&str] = &[
    "input_channels",
    "stage_widths",
    "blocks_per_stage",
    "out_channels",
    "batch_size",
    "epochs",
    "lr0",
    "decay_factor",
    "decay_every",
    "optimizer",
    "momentum",
    "beta1",
    "beta2",
    "adam_eps",
    "weight_decay",
    "seed",
    "init_seed",
    "weight_mode",
    "checkpoint_every",
    "scheme",
    "tile",
    "test_scheme",
    "eval_batch",
    "data",
    "test_dir",
    "out_dir",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Default,
    File(usize),
    Flag,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Model initialization seed; the shuffle seed (`seed`) when unset.
    pub init_seed: Option<u64>,
    pub scheme: DatasetScheme,
    pub tile: usize,
    pub test_scheme: DatasetScheme,
    pub eval_batch: usize,
    pub data: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    origins: BTreeMap<&'static str, Origin>,
    /// File values later replaced by a flag.
    shadowed: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            init_seed: None,
            scheme: DatasetScheme::Set1,
            tile: DEFAULT_TILE,
            test_scheme: DatasetScheme::Test2,
            eval_batch: 8,
            data: None,
            test_dir: None,
            out_dir: None,
            origins: BTreeMap::new(),
            shadowed: BTreeMap::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| anyhow!("`{key}`: cannot parse `{value}`: {e}"))
}

/// Splits `key = value` lines, dropping blanks and comments.
pub fn parse_lines(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected `key = value`, got `{}`", i + 1, raw.trim());
        };
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Splits a `--set key=value` argument.
pub fn split_assignment(arg: &str) -> Result<(String, String)> {
    let (k, v) = arg
        .split_once('=')
        .ok_or_else(|| anyhow!("expected key=value, got `{arg}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text).with_context(|| format!("{}", path.display()))?;
        Ok(cfg)
    }

    /// Default config, a file if given, then flag overrides, validated.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        for (k, v) in overrides {
            cfg.set(k, v, Origin::Flag)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (line, key, value) in parse_lines(text)? {
            self.set(&key, &value, Origin::File(line))
                .map_err(|e| anyhow!("line {line}: {e}"))?;
        }
        Ok(())
    }

    pub fn origin(&self, key: &str) -> Origin {
        self.origins.get(key).copied().unwrap_or(Origin::Default)
    }

    pub fn set(&mut self, key: &str, value: &str, origin: Origin) -> Result<()> {
        let Some(&key) = KEYS.iter().find(|&&k| k == key) else {
            bail!("unknown key `{key}`");
        };
        if origin == Origin::Flag {
            if let Origin::File(_) = self.origin(key) {
                self.shadowed.insert(key, self.value(key));
            }
        }
        let t = &mut self.train;
        match key {
            "input_channels" => self.model.input_channels = parse_num(key, value)?,
            "stage_widths" => {
                let widths: Vec<usize> = value
                    .split(',')
                    .map(|w| parse_num(key, w.trim()))
                    .collect::<Result<_>>()?;
                self.model.stage_widths = widths
                    .try_into()
                    .map_err(|w: Vec<usize>| anyhow!("`stage_widths` needs 4 values, got {}", w.len()))?;
            }
            "blocks_per_stage" => self.model.blocks_per_stage = parse_num(key, value)?,
            "out_channels" => self.model.out_channels = parse_num(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "epochs" => t.epochs = parse_num(key, value)?,
            "lr0" => t.lr0 = parse_num(key, value)?,
            "decay_factor" => t.decay_factor = parse_num(key, value)?,
            "decay_every" => t.decay_every = parse_num(key, value)?,
            "optimizer" => {
                // Keep already-set hyper-parameters when the kind is unchanged.
                let kind: OptimizerKind = value.parse()?;
                if kind.name() != t.optimizer.name() {
                    t.optimizer = kind;
                }
            }
            "momentum" => match &mut t.optimizer {
                OptimizerKind::SgdMomentum { momentum } => *momentum = parse_num(key, value)?,
                OptimizerKind::Adam { .. } => bail!("`momentum` applies to optimizer = sgd_momentum"),
            },
            "beta1" | "beta2" | "adam_eps" => match &mut t.optimizer {
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let slot = match key {
                        "beta1" => beta1,
                        "beta2" => beta2,
                        _ => eps,
                    };
                    *slot = parse_num(key, value)?;
                }
                OptimizerKind::SgdMomentum { .. } => bail!("`{key}` applies to optimizer = adam"),
            },
            "weight_decay" => t.weight_decay = parse_num(key, value)?,
            "seed" => t.seed = parse_num(key, value)?,
            "init_seed" => self.init_seed = Some(parse_num(key, value)?),
            "weight_mode" => t.weight_mode = value.parse()?,
            "checkpoint_every" => t.checkpoint_every = parse_num(key, value)?,
            "scheme" => self.scheme = value.parse()?,
            "tile" => self.tile = parse_num(key, value)?,
            "test_scheme" => self.test_scheme = value.parse()?,
            "eval_batch" => self.eval_batch = parse_num(key, value)?,
            "data" => self.data = Some(PathBuf::from(value)),
            "test_dir" => self.test_dir = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            _ => unreachable!("key list and setter disagree on `{key}`"),
        }
        self.origins.insert(key, origin);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.tile == 0 || self.tile % grainseg_core::model::INPUT_SIZE_DIVISOR != 0 {
            bail!("`tile` must be a positive multiple of 32, got {}", self.tile);
        }
        if self.scheme.is_test() {
            bail!("`scheme` must be a training set (set1..set6), got {}", self.scheme);
        }
        if !self.test_scheme.is_test() {
            bail!("`test_scheme` must be test1 or test2, got {}", self.test_scheme);
        }
        if self.eval_batch == 0 {
            bail!("`eval_batch` must be positive");
        }
        Ok(())
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed.unwrap_or(self.train.seed)
    }

    /// Current value of `key` in config-file syntax; empty when unset.
    pub fn value(&self, key: &str) -> String {
        let t = &self.train;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        match key {
            "input_channels" => self.model.input_channels.to_string(),
            "stage_widths" => self
                .model
                .stage_widths
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "blocks_per_stage" => self.model.blocks_per_stage.to_string(),
            "out_channels" => self.model.out_channels.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "epochs" => t.epochs.to_string(),
            "lr0" => t.lr0.to_string(),
            "decay_factor" => t.decay_factor.to_string(),
            "decay_every" => t.decay_every.to_string(),
            "optimizer" => t.optimizer.name().to_string(),
            "momentum" => match t.optimizer {
                OptimizerKind::SgdMomentum { momentum } => momentum.to_string(),
                OptimizerKind::Adam { .. } => String::new(),
            },
            "beta1" | "beta2" | "adam_eps" => match t.optimizer {
                OptimizerKind::Adam { beta1, beta2, eps } => match key {
                    "beta1" => beta1.to_string(),
                    "beta2" => beta2.to_string(),
                    _ => eps.to_string(),
                },
                OptimizerKind::SgdMomentum { .. } => String::new(),
            },
            "weight_decay" => t.weight_decay.to_string(),
            "seed" => t.seed.to_string(),
            "init_seed" => self.init_seed().to_string(),
            "weight_mode" => t.weight_mode.as_str().to_string(),
            "checkpoint_every" => t.checkpoint_every.to_string(),
            "scheme" => self.scheme.as_str().to_string(),
            "tile" => self.tile.to_string(),
            "test_scheme" => self.test_scheme.as_str().to_string(),
            "eval_batch" => self.eval_batch.to_string(),
            "data" => path(&self.data),
            "test_dir" => path(&self.test_dir),
            "out_dir" => path(&self.out_dir),
            _ => String::new(),
        }
    }

    /// Every key with its effective value; re-readable as a config file.
    pub fn resolved(&self) -> String {
        let mut out = String::from("# effective settings; flags override file values\n");
        for &key in KEYS {
            let value = self.value(key);
            if value.is_empty() {
                let _ = writeln!(out, "# {key} = (unset)");
                continue;
            }
            let note = match (self.origin(key), self.shadowed.get(key)) {
                (Origin::Flag, Some(file)) => format!("flag; file had {file}"),
                (Origin::Flag, None) => "flag".to_string(),
                (Origin::File(line), _) => format!("file line {line}"),
                (Origin::Default, _) => "default".to_string(),
            };
            let _ = writeln!(out, "{key} = {value}  # {note}");
        }
        out
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(RESOLVED_CONFIG);
        std::fs::write(&path, self.resolved()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
