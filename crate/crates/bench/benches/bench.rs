use criterion::{criterion_group, criterion_main};

criterion_group!(transform, wavets_bench::transform);
criterion_group!(model, wavets_bench::forward, wavets_bench::train_step);
criterion_main!(transform, model);
