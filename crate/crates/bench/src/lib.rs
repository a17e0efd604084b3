//! Criterion benchmarks for the transform, the forward pass and one Adam step.

use std::hint::black_box;

use criterion::{BenchmarkId, Criterion, Throughput};
use ndarray::{Array2, Array3};
use wavets_core::data::{synth, SynthKind, Windows};
use wavets_core::grad::{adam_step, AdamConfig, AdamState};
use wavets_core::wavelet::{dwt, FilterBank};
use wavets_core::{count_macs, Model, ModelConfig, Variant, WaveletKind};

/// Smooth deterministic input `rows × len`.
pub fn signal(rows: usize, len: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, len), |(r, t)| {
        ((t as f64) * 0.05 + r as f64).sin() + 0.01 * t as f64
    })
}

pub fn transform(c: &mut Criterion) {
    let x = signal(321, 720);
    let mut group = c.benchmark_group("dwt");
    group.throughput(Throughput::Elements(x.len() as u64));
    for kind in WaveletKind::ALL {
        let bank = FilterBank::new(kind);
        group.bench_function(BenchmarkId::from_parameter(kind), |b| {
            b.iter(|| dwt(black_box(&x), &bank).unwrap())
        });
    }
    group.finish();
}

fn batch(lookback: usize, channels: usize, size: usize) -> Array3<f64> {
    Array3::from_shape_fn((size, lookback, channels), |(b, t, n)| {
        ((t + b) as f64 * 0.1 + n as f64).sin()
    })
}

pub fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    for variant in [Variant::S, Variant::B, Variant::M] {
        let cfg = ModelConfig::new(variant, 720, 96, 321);
        let macs = count_macs(&cfg, 32).unwrap().per_batch;
        let model = Model::init(cfg, 0).unwrap();
        let x = batch(720, 321, 32);
        group.throughput(Throughput::Elements(macs));
        group.bench_function(BenchmarkId::from_parameter(variant), |b| {
            b.iter(|| model.forward(black_box(x.view())).unwrap())
        });
    }
    group.finish();
}

pub fn train_step(c: &mut Criterion) {
    let series = synth(SynthKind::SineMix, 2000, 7, 0).unwrap();
    let windows = Windows::over(&series, 336, 96).unwrap();
    let origins: Vec<usize> = windows.origins()[..32].to_vec();
    let batch = windows.gather(&origins);
    let mut group = c.benchmark_group("train_step");
    group.sample_size(20);
    for variant in [Variant::S, Variant::B, Variant::I] {
        let mut model = Model::init(ModelConfig::new(variant, 336, 96, 7), 0).unwrap();
        let mut state = AdamState::new(AdamConfig::default(), model.params());
        group.bench_function(BenchmarkId::from_parameter(variant), |b| {
            b.iter(|| {
                let (_, grads) = model.loss_and_grads(&batch).unwrap();
                adam_step(model.params_mut(), &grads, &mut state).unwrap();
            })
        });
    }
    group.finish();
}
