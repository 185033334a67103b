use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use heatxai::attribution::{integrated_gradients, Target};
use heatxai::heatwave::{detect_events, tx90_thresholds, DetectConfig};
use heatxai::model::{Classifier, ConvAttnConfig, ConvAttnModel};
use heatxai::synth::{generate, SynthConfig};
use heatxai::{GridStack, Tensor};

fn world() -> GridStack {
    let cfg = SynthConfig {
        first_year: 1990,
        last_year: 2019,
        period_starts: vec![1990],
        amplitude_per_period: vec![1.0],
        ..SynthConfig::default()
    };
    generate(&cfg).unwrap().0
}

fn model_and_input() -> (ConvAttnModel, Tensor) {
    let cfg = ConvAttnConfig { days: 7, variables: 3, height: 8, width: 8, widths: [8, 16, 32], kernel: 3, se_reduction: 4 };
    let model = ConvAttnModel::new(cfg.clone(), 0).unwrap();
    let x: Vec<f64> = (0..cfg.input_len()).map(|i| (i as f64 * 0.37).sin()).collect();
    (model, Tensor::new(vec![7, 3, 8, 8], x))
}

fn detector(c: &mut Criterion) {
    let stack = world();
    let cube = stack.variable_cube(0);
    let n = stack.n_cells();
    c.bench_function("tx90_thresholds 30y 8x8", |b| {
        b.iter(|| tx90_thresholds(black_box(&cube), n, &stack.time, 7, 0.9).unwrap())
    });
    let region = heatxai::RegionMask::rect("r", 8, 8, 3..8, 0..6).unwrap();
    let cfg = DetectConfig::default();
    c.bench_function("detect_events 30y 8x8", |b| {
        b.iter(|| detect_events(black_box(&cube), &stack.time, &region, &cfg, 1).unwrap())
    });
}

fn model(c: &mut Criterion) {
    let (model, x) = model_and_input();
    c.bench_function("conv_attn forward", |b| b.iter(|| model.logit(black_box(x.data())).unwrap()));
    c.bench_function("conv_attn input gradient", |b| b.iter(|| model.logit_input_grad(black_box(x.data())).unwrap()));
    let zero = Tensor::zeros(x.shape().to_vec());
    let mut g = c.benchmark_group("integrated_gradients");
    g.sample_size(10);
    g.bench_function("256 steps", |b| {
        b.iter(|| integrated_gradients(&model, black_box(&x), &zero, 256, Target::Logit).unwrap())
    });
    g.finish();
}

criterion_group!(benches, detector, model);
criterion_main!(benches);
