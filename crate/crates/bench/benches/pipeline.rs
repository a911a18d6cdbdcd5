use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use grainseg_bench::random_tensor;
use grainseg_core::data::{binarize_mask, extract_tiles, generate_synthetic, stitch};
use grainseg_core::loss::weighted_bce;
use grainseg_core::train::init_model;
use grainseg_core::{ClassWeights, DatasetScheme, Mode, ModelConfig, Rng, Tensor};

fn network(c: &mut Criterion) {
    let model = init_model(&ModelConfig::tiny(), 0).unwrap();
    let mut rng = Rng::new(3);
    let x = random_tensor(&mut rng, &[4, 3, 64, 64]);
    c.bench_function("tiny_predict_4x64px", |b| b.iter(|| model.predict(black_box(&x)).unwrap()));

    let target = Tensor::new(&[4, 1, 64, 64], (0..4 * 64 * 64).map(|i| (i % 3 == 0) as u8 as f32).collect()).unwrap();
    let weights = ClassWeights::UNWEIGHTED;
    c.bench_function("tiny_train_step_4x64px", |b| {
        b.iter(|| {
            model.zero_grad();
            let y = model.forward_with(&x, Mode::Train).unwrap();
            weighted_bce(&y, &target, weights).unwrap().backward().unwrap();
        })
    });
}

fn data(c: &mut Criterion) {
    c.bench_function("synth_256px", |b| {
        let mut rng = Rng::new(4);
        b.iter(|| generate_synthetic(&mut rng, 1, 256, 256, 0.4).unwrap())
    });

    let pair = generate_synthetic(&mut Rng::new(5), 1, 512, 640, 0.4).unwrap().remove(0);
    let mask = binarize_mask(&pair.mask);
    let plan = DatasetScheme::Set2.plan(512, 640, 64).unwrap();
    c.bench_function("extract_tiles_set2_512x640", |b| {
        b.iter(|| extract_tiles("p", black_box(&pair.ppl), &mask, &plan).unwrap())
    });
    let tiles: Vec<Vec<f32>> = extract_tiles("p", &pair.ppl, &mask, &plan)
        .unwrap()
        .iter()
        .map(|s| s.mask_f32())
        .collect();
    c.bench_function("stitch_set2_512x640", |b| b.iter(|| stitch(black_box(&tiles), &plan, 512, 640).unwrap()));
}

criterion_group!(benches, network, data);
criterion_main!(benches);
