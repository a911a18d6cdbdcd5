//! Command implementations behind the `grainseg` binary. Each command
//! writes its human-readable output to the given writer so the same code
//! drives the binary and the tests.

pub mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use grainseg_core::data::io::{
    load_pairs, load_photos, read_gray, read_prepared, read_rgb, write_pair, write_png, write_prepared, MANIFEST_FILE,
};
use grainseg_core::data::{binarize_mask, generate_synthetic, prepare_dataset, scheme_views};
use grainseg_core::image::GrayImage;
use grainseg_core::metrics::{aggregate_report, confusion_counts, segmentation_metrics, ImageMetrics};
use grainseg_core::model::{load_checkpoint, read_checkpoint_config};
use grainseg_core::train::{
    final_checkpoint_path, init_model, predict_image, run_ablation, train, view_label, AblationKind, AblationSpec,
    GtPlayback, TileSegmenter, PREDICTION_THRESHOLD,
};
use grainseg_core::{DatasetScheme, Dsgsn, Rng};

pub use config::{RunConfig, RESOLVED_CONFIG};

pub const TRAIN_LOG: &str = "trainlog.json";
pub const ABLATION_REPORT: &str = "ablation.json";
pub const PRED_SUFFIX: &str = "_pred.png";
pub const PROB_SUFFIX: &str = "_prob.png";
pub const MASK_SUFFIX: &str = "_mask.png";

/// View suffixes a prediction name may carry on top of its image id.
const VIEW_SUFFIXES: [&str; 3] = ["_ppl", "_xpl", "_avg"];

pub fn prepare(input: &Path, output: &Path, scheme: DatasetScheme, tile: usize, out: &mut dyn Write) -> Result<usize> {
    let pairs = load_pairs(input)?;
    let data = prepare_dataset(&pairs, scheme, tile)?;
    write_prepared(output, &data)?;
    writeln!(out, "samples={}", data.samples.len())?;
    Ok(data.samples.len())
}

pub struct SynthArgs {
    pub seed: u64,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub grain_fraction: f64,
}

pub fn synth_id(index: usize) -> String {
    format!("synth{index:03}")
}

pub fn synth(output: &Path, args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let mut rng = Rng::new(args.seed);
    let pairs = generate_synthetic(&mut rng, args.count, args.height, args.width, args.grain_fraction)?;
    for (i, mut pair) in pairs.into_iter().enumerate() {
        pair.id = synth_id(i);
        write_pair(output, &pair)?;
    }
    writeln!(out, "pairs={}", args.count)?;
    Ok(())
}

/// Flag values that may also come from the config file.
#[derive(Default)]
pub struct PathOverrides {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
}

/// Loads the run config; typed path flags count as `--set` overrides.
pub fn load_config(path: Option<&Path>, sets: &[(String, String)], paths: &PathOverrides) -> Result<RunConfig> {
    let mut overrides = sets.to_vec();
    for (key, value) in [("data", &paths.data), ("out_dir", &paths.out), ("test_dir", &paths.test_dir)] {
        if let Some(v) = value {
            overrides.push((key.to_string(), v.display().to_string()));
        }
    }
    RunConfig::load(path, &overrides)
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .with_context(|| format!("missing {flag} (or `{key}` in the config)"))
}

/// Manifest path from either the manifest itself or its directory.
fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(MANIFEST_FILE)
    } else {
        data.to_path_buf()
    }
}

pub fn train_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<PathBuf> {
    let data = manifest_path(required(&cfg.data, "--data", "data")?);
    let out_dir = required(&cfg.out_dir, "--out", "out_dir")?.to_path_buf();
    let (_, samples) = read_prepared(&data)?;
    cfg.write_resolved(&out_dir)?;

    let mut train_cfg = cfg.train.clone();
    train_cfg.checkpoint_dir = Some(out_dir.clone());
    let mut model = init_model(&cfg.model, cfg.init_seed())?;
    let mut failed = None;
    let log = train(&mut model, &samples, &train_cfg, |e| {
        // Echo as we go; a write failure surfaces after training.
        if let Err(err) = writeln!(out, "{}", e.progress_line()) {
            failed = Some(err);
        }
    })?;
    if let Some(err) = failed {
        return Err(err.into());
    }
    let log_path = out_dir.join(TRAIN_LOG);
    std::fs::write(&log_path, log.to_json()?).with_context(|| format!("writing {}", log_path.display()))?;
    let checkpoint = final_checkpoint_path(&out_dir);
    writeln!(out, "checkpoint={}", checkpoint.display())?;
    Ok(checkpoint)
}

pub enum Segmenter {
    Checkpoint(PathBuf),
    /// Answers from `<id>_mask.png` files in the directory.
    Playback(PathBuf),
}

pub struct PredictArgs {
    pub segmenter: Segmenter,
    pub inputs: Vec<PathBuf>,
    pub scheme: DatasetScheme,
    pub out: PathBuf,
    pub tile: usize,
    pub batch: usize,
    pub prob: bool,
}

/// `(id, directory)` for every input; a directory contributes all its pairs,
/// a file names its pair through the `_ppl.png`/`_xpl.png` suffix.
fn collect_photos(inputs: &[PathBuf]) -> Result<Vec<(String, PathBuf)>> {
    let mut found = BTreeMap::new();
    for input in inputs {
        if input.is_dir() {
            for (id, _, _) in load_photos(input)? {
                found.entry(id).or_insert_with(|| input.clone());
            }
            continue;
        }
        let name = input.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let id = ["_ppl.png", "_xpl.png"]
            .iter()
            .find_map(|s| name.strip_suffix(s))
            .with_context(|| format!("{}: expected a directory or an <id>_ppl.png / <id>_xpl.png file", input.display()))?;
        let dir = match input.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        found.entry(id.to_string()).or_insert(dir);
    }
    ensure!(!found.is_empty(), "no input images");
    Ok(found.into_iter().collect())
}

fn playback_from_dir(dir: &Path) -> Result<GtPlayback> {
    let mut masks: Vec<(String, GrayImage)> = Vec::new();
    for name in names_with_suffix(dir, MASK_SUFFIX)? {
        masks.push((name.clone(), read_gray(&dir.join(format!("{name}{MASK_SUFFIX}")))?));
    }
    ensure!(!masks.is_empty(), "{}: no <id>{MASK_SUFFIX} files", dir.display());
    Ok(GtPlayback::new(masks.iter().map(|(n, m)| (n.clone(), m))))
}

/// Writes `<label>_pred.png` (and `_prob.png`) for every view; returns the
/// written prediction paths in order.
pub fn predict(args: &PredictArgs, config: Option<&RunConfig>, out: &mut dyn Write) -> Result<Vec<PathBuf>> {
    ensure!(args.scheme.is_test(), "--scheme must be test1 or test2, got {}", args.scheme);
    let segmenter: Box<dyn TileSegmenter> = match &args.segmenter {
        Segmenter::Checkpoint(path) => {
            let model: Dsgsn = load_checkpoint(path, config.map(|c| &c.model)).with_context(|| {
                match (config, read_checkpoint_config(path)) {
                    (Some(c), Ok(stored)) if stored != c.model => format!(
                        "{}: checkpoint was written for {stored:?}, config asks for {:?}",
                        path.display(),
                        c.model
                    ),
                    _ => format!("loading {}", path.display()),
                }
            })?;
            Box::new(model)
        }
        Segmenter::Playback(dir) => Box::new(playback_from_dir(dir)?),
    };
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut written = Vec::new();
    for (id, dir) in collect_photos(&args.inputs)? {
        let ppl = read_rgb(&dir.join(format!("{id}_ppl.png")))?;
        let xpl = read_rgb(&dir.join(format!("{id}_xpl.png")))?;
        ensure!(
            ppl.dimensions() == xpl.dimensions(),
            "`{id}`: ppl {:?} and xpl {:?} differ",
            ppl.dimensions(),
            xpl.dimensions()
        );
        let (w, h) = ppl.dimensions();
        let plan = args.scheme.plan(h as usize, w as usize, args.tile)?;
        for (name, view) in scheme_views(&id, &ppl, &xpl, args.scheme)? {
            let label = view_label(&id, &name, args.scheme);
            let prob = predict_image(segmenter.as_ref(), &label, &view, &plan, args.batch)?;
            let pred_path = args.out.join(format!("{label}{PRED_SUFFIX}"));
            write_png(&pred_path, &prob.threshold(PREDICTION_THRESHOLD).to_gray())?;
            if args.prob {
                write_png(&args.out.join(format!("{label}{PROB_SUFFIX}")), &prob.to_gray())?;
            }
            written.push(pred_path);
        }
    }
    writeln!(out, "predictions={}", written.len())?;
    Ok(written)
}

/// Stems of the files in `dir` ending in `suffix`, sorted.
fn names_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<String>> {
    let mut names = BTreeSet::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let entry = entry?;
        if let Some(stem) = entry.file_name().to_str().and_then(|n| n.strip_suffix(suffix)) {
            names.insert(stem.to_string());
        }
    }
    Ok(names.into_iter().collect())
}

/// Ground-truth id a prediction name refers to: the name itself, or the
/// name without a trailing view suffix.
fn match_gt<'a>(name: &str, gt: &'a BTreeSet<String>) -> Option<&'a String> {
    gt.get(name).or_else(|| {
        VIEW_SUFFIXES
            .iter()
            .find_map(|s| name.strip_suffix(s))
            .and_then(|base| gt.get(base))
    })
}

pub fn eval(pred_dir: &Path, gt_dir: &Path, report_path: &Path, out: &mut dyn Write) -> Result<()> {
    let preds = names_with_suffix(pred_dir, PRED_SUFFIX)?;
    ensure!(!preds.is_empty(), "{}: no <id>{PRED_SUFFIX} files", pred_dir.display());
    let gts: BTreeSet<String> = names_with_suffix(gt_dir, MASK_SUFFIX)?.into_iter().collect();

    let mut pairs = Vec::new();
    let mut orphan_preds = Vec::new();
    let mut used = BTreeSet::new();
    for name in &preds {
        match match_gt(name, &gts) {
            Some(gt) => {
                used.insert(gt.clone());
                pairs.push((name.clone(), gt.clone()));
            }
            None => orphan_preds.push(name.clone()),
        }
    }
    let orphan_gts: Vec<&String> = gts.difference(&used).collect();
    if !orphan_preds.is_empty() || !orphan_gts.is_empty() {
        bail!(
            "unmatched ids: predictions without ground truth {orphan_preds:?}; ground truth without predictions {orphan_gts:?}"
        );
    }

    let mut rows = Vec::with_capacity(pairs.len());
    for (name, gt) in pairs {
        let pred = binarize_mask(&read_gray(&pred_dir.join(format!("{name}{PRED_SUFFIX}")))?);
        let truth = binarize_mask(&read_gray(&gt_dir.join(format!("{gt}{MASK_SUFFIX}")))?);
        ensure!(
            (pred.height, pred.width) == (truth.height, truth.width),
            "`{name}`: prediction is {}×{} but ground truth is {}×{}",
            pred.height,
            pred.width,
            truth.height,
            truth.width
        );
        rows.push(ImageMetrics {
            id: name,
            metrics: segmentation_metrics(&confusion_counts(&pred.data, &truth.data)?),
        });
    }
    let report = aggregate_report(rows)?;
    if let Some(parent) = report_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(report_path, report.to_json()?).with_context(|| format!("writing {}", report_path.display()))?;
    write!(out, "{}", report.aggregate_table())?;
    Ok(())
}

pub fn info(cfg: &RunConfig, out: &mut dyn Write) -> Result<usize> {
    let model = Dsgsn::zeroed(&cfg.model)?;
    let groups = model.layer_groups();
    let width = groups.iter().map(|g| g.name.len()).max().unwrap_or(0).max("total".len());
    writeln!(out, "{:<width$} {:>8} {:>12}", "group", "tensors", "params")?;
    for g in &groups {
        writeln!(out, "{:<width$} {:>8} {:>12}", g.name, g.tensors, g.params)?;
    }
    let total = model.param_count();
    writeln!(out, "{:<width$} {:>8} {:>12}", "total", groups.iter().map(|g| g.tensors).sum::<usize>(), total)?;
    Ok(total)
}

pub fn ablate(kind: AblationKind, data_root: &Path, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let test_dir = required(&cfg.test_dir, "--test-dir", "test_dir")?;
    let out_dir = required(&cfg.out_dir, "--out", "out_dir")?.to_path_buf();
    let test_pairs = load_pairs(test_dir)?;
    cfg.write_resolved(&out_dir)?;

    let mut spec = AblationSpec::new(kind, cfg.model.clone(), cfg.train.clone());
    spec.init_seed = cfg.init_seed();
    spec.loss_scheme = cfg.scheme;
    spec.test_scheme = cfg.test_scheme;
    spec.tile = cfg.tile;
    spec.eval_batch = cfg.eval_batch;
    let mut failed = None;
    let table = run_ablation(&spec, data_root, &test_pairs, |arm, e| {
        if let Err(err) = writeln!(out, "arm={arm} {}", e.progress_line()) {
            failed = Some(err);
        }
    })?;
    if let Some(err) = failed {
        return Err(err.into());
    }
    let path = out_dir.join(ABLATION_REPORT);
    std::fs::write(&path, table.to_json()?).with_context(|| format!("writing {}", path.display()))?;
    for row in &table.rows {
        writeln!(
            out,
            "arm={} samples={} final_loss={:.6} jaccard_avg={:.4} f1_avg={:.4}",
            row.arm, row.samples, row.final_loss, row.aggregate.jaccard.avg, row.aggregate.f1.avg
        )?;
    }
    Ok(())
}
