//! Pixel-level evaluation measures and per-image aggregation.
//!
//! Grain (mask value 1) is the positive class. Ratios with a `0/0` form are
//! 1.0 when both the predicted and ground-truth grain sets are empty and 0.0
//! otherwise, so all-background tiles score as perfect rather than `NaN`.

use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts obtained when both masks are inverted.
    pub fn inverted(&self) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: ConfusionCounts) {
        *self = *self + o;
    }
}

/// Pixelwise comparison of two binary masks (nonzero = grain).
pub fn confusion_counts(pred: &[u8], gt: &[u8]) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "confusion_counts: prediction has {} pixels, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p != 0, g != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMetrics {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub jaccard: f64,
}

impl SegmentationMetrics {
    pub const NAMES: [&'static str; 5] = ["accuracy", "recall", "precision", "f1", "jaccard"];

    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.recall, self.precision, self.f1, self.jaccard]
    }
}

pub fn segmentation_metrics(c: &ConfusionCounts) -> SegmentationMetrics {
    let both_empty = c.tp == 0 && c.fp == 0 && c.fn_ == 0;
    let ratio = |num: u64, den: u64| -> f64 {
        if den == 0 {
            if both_empty {
                1.0
            } else {
                0.0
            }
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        if both_empty {
            1.0
        } else {
            0.0
        }
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    SegmentationMetrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        recall,
        precision,
        f1,
        jaccard: ratio(c.tp, c.tp + c.fp + c.fn_),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    #[serde(flatten)]
    pub metrics: SegmentationMetrics,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub min: f64,
    pub max: f64,
    pub avg: f64,
    pub std: f64,
}

impl Stat {
    /// Min, max, mean and population standard deviation.
    fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Stat {
            min,
            max,
            // rounding in the mean must not break min <= avg <= max
            avg: mean.clamp(min, max),
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: Stat,
    pub recall: Stat,
    pub precision: Stat,
    pub f1: Stat,
    pub jaccard: Stat,
}

impl Aggregate {
    pub fn stats(&self) -> [Stat; 5] {
        [self.accuracy, self.recall, self.precision, self.f1, self.jaccard]
    }
}

/// Per-image rows plus min/max/avg/std of each measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_image: Vec<ImageMetrics>,
    pub aggregate: Aggregate,
}

pub fn aggregate_report(rows: Vec<ImageMetrics>) -> Result<MetricsReport> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("aggregate_report: no rows".into()));
    }
    let column = |i: usize| -> Vec<f64> { rows.iter().map(|r| r.metrics.values()[i]).collect() };
    let aggregate = Aggregate {
        accuracy: Stat::of(&column(0)),
        recall: Stat::of(&column(1)),
        precision: Stat::of(&column(2)),
        f1: Stat::of(&column(3)),
        jaccard: Stat::of(&column(4)),
    };
    Ok(MetricsReport {
        per_image: rows,
        aggregate,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Min/Max/Avg/Std table, one measure per column.
    pub fn aggregate_table(&self) -> String {
        let mut out = String::from("stat");
        for name in SegmentationMetrics::NAMES {
            let _ = write!(out, " {name:>10}");
        }
        out.push('\n');
        let stats = self.aggregate.stats();
        for (label, pick) in [
            ("min", (|s: &Stat| s.min) as fn(&Stat) -> f64),
            ("max", |s| s.max),
            ("avg", |s| s.avg),
            ("std", |s| s.std),
        ] {
            out.push_str(label);
            for s in &stats {
                let _ = write!(out, " {:>10.4}", pick(s));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_masks() {
        let mut m = vec![0u8; 16];
        m[..10].fill(1);
        let c = confusion_counts(&m, &m).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 10, fp: 0, fn_: 0, tn: 6 });
    }

    #[test]
    fn two_by_two_by_hand() {
        let gt = [1u8, 1, 0, 0];
        let pred = [1u8, 0, 0, 0];
        let c = confusion_counts(&pred, &gt).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 0, fn_: 1, tn: 2 });
        let m = segmentation_metrics(&c);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 0.5);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.jaccard, 0.5);
    }

    #[test]
    fn all_missed() {
        let c = confusion_counts(&[0; 9], &[1; 9]).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 0, fp: 0, fn_: 9, tn: 0 });
        let m = segmentation_metrics(&c);
        assert_eq!((m.precision, m.recall, m.f1, m.jaccard, m.accuracy), (0.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn shape_mismatch() {
        assert!(confusion_counts(&[0; 3], &[0; 4]).is_err());
    }

    #[test]
    fn perfect_and_empty_conventions() {
        let m = segmentation_metrics(&ConfusionCounts { tp: 5, fp: 0, fn_: 0, tn: 3 });
        assert_eq!(m.values(), [1.0; 5]);
        let m = segmentation_metrics(&ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 7 });
        assert_eq!(m.values(), [1.0; 5]);
        // only false positives: precision 0/1, recall 0/0 but not both empty
        let m = segmentation_metrics(&ConfusionCounts { tp: 0, fp: 2, fn_: 0, tn: 7 });
        assert_eq!((m.precision, m.recall, m.f1, m.jaccard), (0.0, 0.0, 0.0, 0.0));
    }

    fn row(id: &str, accuracy: f64) -> ImageMetrics {
        ImageMetrics {
            id: id.into(),
            metrics: SegmentationMetrics {
                accuracy,
                recall: 0.5,
                precision: 0.25,
                f1: 1.0 / 3.0,
                jaccard: 0.2,
            },
        }
    }

    #[test]
    fn aggregate_single_row() {
        let r = aggregate_report(vec![row("a", 0.9)]).unwrap();
        let s = r.aggregate.accuracy;
        assert_eq!((s.min, s.max, s.avg, s.std), (0.9, 0.9, 0.9, 0.0));
    }

    #[test]
    fn aggregate_two_points() {
        let r = aggregate_report(vec![row("a", 0.8), row("b", 0.9)]).unwrap();
        let s = r.aggregate.accuracy;
        assert!((s.avg - 0.85).abs() < 1e-12);
        assert!((s.std - 0.05).abs() < 1e-12);
        assert_eq!(r.aggregate.recall.std, 0.0);
    }

    #[test]
    fn aggregate_requires_rows() {
        assert!(aggregate_report(vec![]).is_err());
    }

    #[test]
    fn json_layout() {
        let r = aggregate_report(vec![row("img1", 0.8)]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(v["per_image"][0]["id"], "img1");
        assert_eq!(v["per_image"][0]["accuracy"], 0.8);
        assert_eq!(v["aggregate"]["jaccard"]["avg"], 0.2);
        for name in SegmentationMetrics::NAMES {
            for stat in ["min", "max", "avg", "std"] {
                assert!(v["aggregate"][name][stat].is_number(), "{name}.{stat}");
            }
        }
    }

    fn counts() -> impl Strategy<Value = ConfusionCounts> {
        (0u64..50, 0u64..50, 0u64..50, 0u64..50).prop_map(|(tp, fp, fn_, tn)| ConfusionCounts { tp, fp, fn_, tn })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn jaccard_le_f1(c in counts()) {
            prop_assume!(c.total() > 0);
            let m = segmentation_metrics(&c);
            prop_assert!(0.0 <= m.jaccard);
            prop_assert!(m.jaccard <= m.f1 + 1e-12);
            prop_assert!(m.f1 <= 1.0);
        }

        #[test]
        fn inversion_swaps_counts(bits in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
            let pred: Vec<u8> = bits.iter().map(|b| b.0 as u8).collect();
            let gt: Vec<u8> = bits.iter().map(|b| b.1 as u8).collect();
            let inv_p: Vec<u8> = pred.iter().map(|v| 1 - v).collect();
            let inv_g: Vec<u8> = gt.iter().map(|v| 1 - v).collect();
            let c = confusion_counts(&pred, &gt).unwrap();
            prop_assert_eq!(confusion_counts(&inv_p, &inv_g).unwrap(), c.inverted());
            prop_assert_eq!(c.total() as usize, bits.len());
        }

        #[test]
        fn aggregate_ordering(vals in proptest::collection::vec(0.0f64..1.0, 1..20)) {
            let rows: Vec<_> = vals.iter().enumerate().map(|(i, &v)| row(&i.to_string(), v)).collect();
            let r = aggregate_report(rows).unwrap();
            for s in r.aggregate.stats() {
                prop_assert!(s.min <= s.avg && s.avg <= s.max && s.std >= 0.0);
            }
        }
    }
}
