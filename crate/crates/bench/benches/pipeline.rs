use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use spectrascope_bench::{gaussian_layer, mlp, modadd, synthetic_images};
use spectrascope_core::lab::{adamw_step, AdamWConfig, AdamWState, Model};
use spectrascope_core::powerlaw::{fit_powerlaw, PLOptions};
use spectrascope_core::rmt::{fit_mp, TrimPolicy};
use spectrascope_core::spectral::esd;
use spectrascope_core::traps::{detect_traps, TrapConfig};

fn spectra(c: &mut Criterion) {
    let fc1 = gaussian_layer(784, 200, 1);
    let big = gaussian_layer(2000, 500, 2);
    c.bench_function("esd 784x200", |b| b.iter(|| esd(&fc1).unwrap()));
    c.bench_function("esd 2000x500", |b| b.iter(|| esd(&big).unwrap()));

    let spec = esd(&big).unwrap();
    c.bench_function("fit_mp M=500", |b| b.iter(|| fit_mp(&spec, TrimPolicy::default()).unwrap()));
    c.bench_function("fit_powerlaw M=500", |b| {
        b.iter(|| fit_powerlaw(&spec, &PLOptions::default()).unwrap())
    });
    c.bench_function("detect_traps 784x200", |b| {
        b.iter(|| detect_traps(&fc1, &TrapConfig::default()).unwrap())
    });
}

fn train_step<M: Model>(model: &mut M, state: &mut AdamWState, data: &spectrascope_core::LabeledDataset, idx: &[usize]) {
    let (_, grads) = model.loss_and_grad(data, idx).unwrap();
    let mut views: Vec<&mut [f64]> = model.params_mut().iter_mut().map(|p| p.data.as_mut_slice()).collect();
    adamw_step(&mut views, &grads, state, &AdamWConfig::default());
}

fn training(c: &mut Criterion) {
    let mut g = c.benchmark_group("train step");
    g.sample_size(10);

    let data = synthetic_images(200, 3);
    let idx: Vec<usize> = (0..200).collect();
    let model = mlp();
    g.bench_function("mlp batch 200", |b| {
        b.iter_batched(
            || (model.clone(), AdamWState::new(model.params().iter().map(|p| p.data.len()))),
            |(mut m, mut s)| train_step(&mut m, &mut s, &data, &idx),
            BatchSize::LargeInput,
        )
    });

    let (tf, train) = modadd(113);
    let idx: Vec<usize> = (0..train.len()).collect();
    g.bench_function("modadd p=113 full batch", |b| {
        b.iter_batched(
            || (tf.clone(), AdamWState::new(tf.params().iter().map(|p| p.data.len()))),
            |(mut m, mut s)| train_step(&mut m, &mut s, &train, &idx),
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

criterion_group!(benches, spectra, training);
criterion_main!(benches);
