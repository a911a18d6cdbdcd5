//! Confusion counts, the five measures, report aggregation and the loss,
//! against set-based and scalar oracles.

use grainseg_core::loss::{compute_class_weights, weighted_bce, ClassWeights, WeightMode};
use grainseg_core::metrics::{aggregate_report, confusion_counts, segmentation_metrics, ImageMetrics, SegmentationMetrics};
use grainseg_core::{Rng, Tensor};
use proptest::prelude::*;

struct Oracle {
    accuracy: f64,
    recall: f64,
    precision: f64,
    f1: f64,
    jaccard: f64,
}

/// Set-based definitions: A = ground-truth grain pixels, B = predicted.
fn oracle(pred: &[u8], gt: &[u8]) -> (u64, u64, u64, u64, Oracle) {
    let (mut inter, mut a, mut b, mut union, mut correct) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for i in 0..pred.len() {
        let (in_a, in_b) = (gt[i] == 1, pred[i] == 1);
        inter += (in_a && in_b) as u64;
        a += in_a as u64;
        b += in_b as u64;
        union += (in_a || in_b) as u64;
        correct += (in_a == in_b) as u64;
    }
    let empty = union == 0;
    let frac = |n: u64, d: u64| if d == 0 { if empty { 1.0 } else { 0.0 } } else { n as f64 / d as f64 };
    let precision = frac(inter, b);
    let recall = frac(inter, a);
    let f1 = if precision + recall == 0.0 { if empty { 1.0 } else { 0.0 } } else { 2.0 * precision * recall / (precision + recall) };
    let tp = inter;
    let fp = b - inter;
    let fn_ = a - inter;
    let tn = pred.len() as u64 - union;
    let m = Oracle {
        accuracy: correct as f64 / pred.len() as f64,
        recall,
        precision,
        f1,
        jaccard: frac(inter, union),
    };
    (tp, fp, fn_, tn, m)
}

fn random_mask(rng: &mut Rng, n: usize, p: f64) -> Vec<u8> {
    (0..n).map(|_| (rng.uniform() < p) as u8).collect()
}

#[test]
fn counts_and_metrics_match_set_oracle() {
    let mut rng = Rng::new(400);
    for case in 0..100 {
        // Vary density so empty and full masks show up.
        let p_gt = [0.0, 0.05, 0.5, 0.95, 1.0][case % 5];
        let p_pred = rng.uniform();
        let gt = random_mask(&mut rng, 256, p_gt);
        let pred = random_mask(&mut rng, 256, if case % 7 == 0 { 0.0 } else { p_pred });
        let c = confusion_counts(&pred, &gt).unwrap();
        let (tp, fp, fn_, tn, o) = oracle(&pred, &gt);
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (tp, fp, fn_, tn), "case {case}");
        let m = segmentation_metrics(&c);
        assert_eq!(m.accuracy, o.accuracy, "case {case}");
        assert_eq!(m.recall, o.recall, "case {case}");
        assert_eq!(m.precision, o.precision, "case {case}");
        assert_eq!(m.f1, o.f1, "case {case}");
        assert_eq!(m.jaccard, o.jaccard, "case {case}");
    }
}

#[test]
fn hand_worked_examples() {
    let c = confusion_counts(&[1, 0, 0, 0], &[1, 1, 0, 0]).unwrap();
    assert_eq!((c.tp, c.fp, c.fn_, c.tn), (1, 0, 1, 2));
    let m = segmentation_metrics(&c);
    assert_eq!((m.precision, m.recall, m.accuracy, m.jaccard), (1.0, 0.5, 0.75, 0.5));
    assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);

    let empty = segmentation_metrics(&confusion_counts(&[0; 9], &[0; 9]).unwrap());
    assert_eq!(empty.values(), [1.0; 5]);
    let missed = segmentation_metrics(&confusion_counts(&[0; 9], &[1; 9]).unwrap());
    assert_eq!(missed.values(), [0.0; 5]);
    assert!(confusion_counts(&[0; 3], &[0; 4]).is_err());
}

fn oracle_stat(v: &[f64]) -> (f64, f64, f64, f64) {
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
    (sorted[0], sorted[v.len() - 1], mean, var.sqrt())
}

#[test]
fn aggregation_matches_independent_statistics() {
    let mut rng = Rng::new(401);
    for n in [1usize, 2, 4, 17] {
        let rows: Vec<ImageMetrics> = (0..n)
            .map(|i| ImageMetrics {
                id: format!("img{i}"),
                metrics: SegmentationMetrics {
                    accuracy: rng.uniform(),
                    recall: rng.uniform(),
                    precision: rng.uniform(),
                    f1: rng.uniform(),
                    jaccard: rng.uniform(),
                },
            })
            .collect();
        let report = aggregate_report(rows.clone()).unwrap();
        for (k, stat) in report.aggregate.stats().iter().enumerate() {
            let col: Vec<f64> = rows.iter().map(|r| r.metrics.values()[k]).collect();
            let (min, max, avg, std) = oracle_stat(&col);
            assert_eq!((stat.min, stat.max), (min, max));
            assert!((stat.avg - avg).abs() <= 1e-9 && (stat.std - std).abs() <= 1e-9, "n={n} metric {k}");
        }
    }

    let two = aggregate_report(
        [0.8, 0.9]
            .iter()
            .map(|&a| ImageMetrics { id: "x".into(), metrics: SegmentationMetrics { accuracy: a, recall: 1.0, precision: 1.0, f1: 1.0, jaccard: 1.0 } })
            .collect(),
    )
    .unwrap();
    assert!((two.aggregate.accuracy.avg - 0.85).abs() < 1e-12);
    assert!((two.aggregate.accuracy.std - 0.05).abs() < 1e-12);
    assert!(aggregate_report(Vec::new()).is_err());
}

#[test]
fn report_json_layout() {
    let row = ImageMetrics {
        id: "a".into(),
        metrics: segmentation_metrics(&confusion_counts(&[1, 0, 0, 0], &[1, 1, 0, 0]).unwrap()),
    };
    let json = aggregate_report(vec![row]).unwrap().to_json().unwrap();
    assert!(json.ends_with('\n'));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["per_image"][0]["id"], "a");
    assert_eq!(v["per_image"][0]["jaccard"], 0.5);
    for name in SegmentationMetrics::NAMES {
        for stat in ["min", "max", "avg", "std"] {
            assert!(v["aggregate"][name][stat].is_number(), "{name}.{stat}");
        }
    }
}

fn bce_tensor(v: &[f32]) -> Tensor {
    Tensor::new(&[v.len()], v.to_vec()).unwrap()
}

/// Scalar evaluation of −w1·t·ln p − w0·(1−t)·ln(1−p), averaged.
fn bce_oracle(p: &[f32], t: &[f32], w0: f64, w1: f64) -> f64 {
    p.iter()
        .zip(t)
        .map(|(&p, &t)| {
            let p = (p as f64).clamp(1e-7, 1.0 - 1e-7);
            -w1 * t as f64 * p.ln() - w0 * (1.0 - t as f64) * (1.0 - p).ln()
        })
        .sum::<f64>()
        / p.len() as f64
}

#[test]
fn loss_examples() {
    let w = ClassWeights::new(0.5, 0.5, WeightMode::AsWritten);
    let l = weighted_bce(&bce_tensor(&[0.8, 0.3]), &bce_tensor(&[1.0, 0.0]), w).unwrap().item();
    assert!((l as f64 - 0.14496).abs() < 1e-4);
    let ones = ClassWeights::new(1.0, 1.0, WeightMode::Unweighted);
    let l = weighted_bce(&bce_tensor(&[0.5; 6]), &bce_tensor(&[1.0; 6]), ones).unwrap().item();
    assert!((l as f64 - std::f64::consts::LN_2).abs() < 1e-6);

    let mask: Vec<u8> = (0..16).map(|i| (i < 4) as u8).collect();
    let aw = compute_class_weights([mask.as_slice()], WeightMode::AsWritten).unwrap();
    assert_eq!((aw.w0, aw.w1), (0.75, 0.25));
    let inv = compute_class_weights([mask.as_slice()], WeightMode::InverseFrequency).unwrap();
    assert_eq!((inv.w0, inv.w1), (0.25, 0.75));
}

proptest! {
    #[test]
    fn loss_matches_scalar_oracle_and_half_scaling(
        values in prop::collection::vec((0.0f32..1.0, any::<bool>()), 1..64),
        w1 in 0.01f32..1.0,
    ) {
        let p: Vec<f32> = values.iter().map(|v| v.0).collect();
        let t: Vec<f32> = values.iter().map(|v| v.1 as u8 as f32).collect();
        let weights = ClassWeights::new(1.0 - w1, w1, WeightMode::AsWritten);
        let got = weighted_bce(&bce_tensor(&p), &bce_tensor(&t), weights).unwrap().item() as f64;
        let expect = bce_oracle(&p, &t, (1.0 - w1) as f64, w1 as f64);
        prop_assert!((got - expect).abs() <= 1e-5 * expect.max(1.0), "{got} vs {expect}");

        let half = weighted_bce(&bce_tensor(&p), &bce_tensor(&t), ClassWeights::new(0.5, 0.5, WeightMode::AsWritten)).unwrap().item();
        let full = weighted_bce(&bce_tensor(&p), &bce_tensor(&t), ClassWeights::UNWEIGHTED).unwrap().item();
        prop_assert!((half as f64 - 0.5 * full as f64).abs() <= 1e-6 * full.max(1.0) as f64);
    }

    #[test]
    fn loss_positive_unless_perfect(t in prop::collection::vec(any::<bool>(), 1..64), flip in any::<prop::sample::Index>()) {
        let target: Vec<f32> = t.iter().map(|&b| b as u8 as f32).collect();
        let perfect = weighted_bce(&bce_tensor(&target), &bce_tensor(&target), ClassWeights::UNWEIGHTED).unwrap().item();
        prop_assert!(perfect <= 2e-6);
        let mut off = target.clone();
        let i = flip.index(off.len());
        off[i] = if off[i] > 0.5 { 0.9 } else { 0.1 };
        let loss = weighted_bce(&bce_tensor(&off), &bce_tensor(&target), ClassWeights::UNWEIGHTED).unwrap().item();
        prop_assert!(loss > perfect);
    }
}
