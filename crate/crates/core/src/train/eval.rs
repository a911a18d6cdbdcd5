//! Tiled inference, stitching and metric reports.

use std::collections::HashMap;

use image::RgbImage;

use crate::data::{binarize_mask, extract_image_tiles, scheme_views, stitch, DatasetScheme, ImagePair, ProbMap, Sample, TilePlan};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_report, confusion_counts, segmentation_metrics, ConfusionCounts, ImageMetrics, MetricsReport, SegmentationMetrics};
use crate::model::Dsgsn;
use crate::tensor::Tensor;

pub const PREDICTION_THRESHOLD: f32 = 0.5;

/// A run of tiles cut from one source image.
pub struct TileBatch<'a> {
    /// View name, e.g. `pair3_ppl`.
    pub source: &'a str,
    pub tile: usize,
    pub origins: &'a [(usize, usize)],
    /// Planar `3×tile×tile` bytes per tile.
    pub images: &'a [Vec<u8>],
}

/// Anything that maps image tiles to per-pixel grain probabilities.
pub trait TileSegmenter {
    /// One `tile×tile` probability vector per input tile, in order.
    fn segment(&self, batch: &TileBatch<'_>) -> Result<Vec<Vec<f32>>>;
}

impl TileSegmenter for Dsgsn {
    fn segment(&self, batch: &TileBatch<'_>) -> Result<Vec<Vec<f32>>> {
        let t = batch.tile;
        let n = batch.images.len();
        let mut data = Vec::with_capacity(n * 3 * t * t);
        for img in batch.images {
            data.extend(img.iter().map(|&v| v as f32 / 255.0));
        }
        let out = self.predict(&Tensor::new(&[n, 3, t, t], data)?)?;
        let probs = out.to_vec();
        Ok(probs.chunks(t * t).map(<[f32]>::to_vec).collect())
    }
}

/// Answers each tile from a stored mask: the loop-back oracle for the
/// tiling/stitching/thresholding path.
pub struct GtPlayback {
    masks: HashMap<String, (usize, usize, Vec<u8>)>,
}

impl GtPlayback {
    /// `masks` are keyed by view name or by bare image id.
    pub fn new<'a>(masks: impl IntoIterator<Item = (String, &'a image::GrayImage)>) -> Self {
        let masks = masks
            .into_iter()
            .map(|(id, g)| {
                let bin = binarize_mask(g);
                (id, (bin.height, bin.width, bin.data))
            })
            .collect();
        GtPlayback { masks }
    }

    pub fn from_pairs(pairs: &[ImagePair]) -> Self {
        Self::new(pairs.iter().map(|p| (p.id.clone(), &p.mask)))
    }

    fn lookup(&self, source: &str) -> Option<&(usize, usize, Vec<u8>)> {
        self.masks.get(source).or_else(|| {
            let (base, _) = source.rsplit_once('_')?;
            self.masks.get(base)
        })
    }
}

impl TileSegmenter for GtPlayback {
    fn segment(&self, batch: &TileBatch<'_>) -> Result<Vec<Vec<f32>>> {
        let (h, w, mask) = self
            .lookup(batch.source)
            .ok_or_else(|| Error::InvalidArgument(format!("no playback mask for `{}`", batch.source)))?;
        let t = batch.tile;
        Ok(batch
            .origins
            .iter()
            .map(|&(r0, c0)| {
                let mut out = vec![0.0; t * t];
                for r in 0..t.min(h.saturating_sub(r0)) {
                    for c in 0..t.min(w.saturating_sub(c0)) {
                        out[r * t + c] = mask[(r0 + r) * w + c0 + c] as f32;
                    }
                }
                out
            })
            .collect())
    }
}

/// Returns the same probability everywhere.
pub struct ConstantSegmenter(pub f32);

impl TileSegmenter for ConstantSegmenter {
    fn segment(&self, batch: &TileBatch<'_>) -> Result<Vec<Vec<f32>>> {
        Ok(vec![vec![self.0; batch.tile * batch.tile]; batch.images.len()])
    }
}

/// Tiles `image` per `plan`, segments in batches and stitches back to the
/// original size.
pub fn predict_image(
    segmenter: &dyn TileSegmenter,
    source: &str,
    image: &RgbImage,
    plan: &TilePlan,
    batch_size: usize,
) -> Result<ProbMap> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let tiles = extract_image_tiles(image, plan)?;
    let mut probs = Vec::with_capacity(tiles.len());
    for (images, origins) in tiles.chunks(batch_size).zip(plan.origins.chunks(batch_size)) {
        let out = segmenter.segment(&TileBatch {
            source,
            tile: plan.tile,
            origins,
            images,
        })?;
        if out.len() != images.len() || out.iter().any(|p| p.len() != plan.tile * plan.tile) {
            return Err(Error::Shape(format!(
                "segmenter returned {} maps for {} tiles of {}²",
                out.len(),
                images.len(),
                plan.tile
            )));
        }
        probs.extend(out);
    }
    stitch(&probs, plan, plan.height, plan.width)
}

/// Output/report name of a view: the bare id when the scheme has a single
/// view, otherwise `<id>_<view>`.
pub fn view_label(id: &str, view_name: &str, scheme: DatasetScheme) -> String {
    if scheme.views().len() == 1 {
        id.to_string()
    } else {
        view_name.to_string()
    }
}

/// Per-view metrics on full-resolution test images.
pub fn evaluate_model(
    segmenter: &dyn TileSegmenter,
    pairs: &[ImagePair],
    scheme: DatasetScheme,
    tile: usize,
    batch_size: usize,
) -> Result<MetricsReport> {
    if !scheme.is_test() {
        return Err(Error::InvalidArgument(format!(
            "evaluation needs test1 or test2, got {scheme}"
        )));
    }
    let mut rows = Vec::new();
    for pair in pairs {
        pair.validate()?;
        let (h, w) = pair.dims();
        let gt = binarize_mask(&pair.mask);
        let plan = scheme.plan(h, w, tile)?;
        for (name, view) in scheme_views(&pair.id, &pair.ppl, &pair.xpl, scheme)? {
            let label = view_label(&pair.id, &name, scheme);
            let pred = predict_image(segmenter, &label, &view, &plan, batch_size)?.threshold(PREDICTION_THRESHOLD);
            let counts = confusion_counts(&pred.data, &gt.data)?;
            rows.push(ImageMetrics {
                id: label,
                metrics: segmentation_metrics(&counts),
            });
        }
    }
    aggregate_report(rows)
}

/// Pooled metrics of `model` on already-cut samples (each tile segmented
/// whole, no stitching).
pub fn evaluate_samples(model: &Dsgsn, samples: &[Sample], batch_size: usize) -> Result<SegmentationMetrics> {
    if samples.is_empty() || batch_size == 0 {
        return Err(Error::InvalidArgument("need samples and a positive batch size".into()));
    }
    let mut total = ConfusionCounts::default();
    for chunk in samples.chunks(batch_size) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, _) = super::batch_tensors(&refs)?;
        let probs = model.predict(&x)?.to_vec();
        let t2 = chunk[0].tile * chunk[0].tile;
        for (s, p) in chunk.iter().zip(probs.chunks(t2)) {
            let pred: Vec<u8> = p.iter().map(|&v| u8::from(v >= PREDICTION_THRESHOLD)).collect();
            total += confusion_counts(&pred, &s.mask)?;
        }
    }
    Ok(segmentation_metrics(&total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use crate::Rng;

    #[test]
    fn playback_scores_perfectly() {
        let pairs = generate_synthetic(&mut Rng::new(4), 2, 100, 70, 0.4).unwrap();
        let gt = GtPlayback::from_pairs(&pairs);
        for scheme in [DatasetScheme::Test1, DatasetScheme::Test2] {
            let report = evaluate_model(&gt, &pairs, scheme, 32, 5).unwrap();
            assert_eq!(report.per_image.len(), pairs.len() * scheme.views().len());
            for stat in report.aggregate.stats() {
                assert_eq!((stat.min, stat.max, stat.avg, stat.std), (1.0, 1.0, 1.0, 0.0));
            }
        }
    }

    #[test]
    fn constant_half_predicts_all_grain() {
        let pairs = generate_synthetic(&mut Rng::new(5), 1, 64, 64, 0.3).unwrap();
        let report = evaluate_model(&ConstantSegmenter(0.5), &pairs, DatasetScheme::Test2, 32, 4).unwrap();
        let f = binarize_mask(&pairs[0].mask).foreground_fraction();
        let m = &report.per_image[0].metrics;
        assert!((m.accuracy - f).abs() < 1e-12);
        assert_eq!(m.recall, 1.0);
        assert!((m.precision - f).abs() < 1e-12);
        assert!((m.jaccard - f).abs() < 1e-12);
        assert!((m.f1 - 2.0 * f / (1.0 + f)).abs() < 1e-12);
    }

    #[test]
    fn rejects_training_scheme() {
        let pairs = generate_synthetic(&mut Rng::new(6), 1, 32, 32, 0.3).unwrap();
        assert!(evaluate_model(&ConstantSegmenter(0.5), &pairs, DatasetScheme::Set1, 32, 4).is_err());
    }

    #[test]
    fn labels() {
        assert_eq!(view_label("a", "a_avg", DatasetScheme::Test2), "a");
        assert_eq!(view_label("a", "a_ppl", DatasetScheme::Test1), "a_ppl");
    }
}
