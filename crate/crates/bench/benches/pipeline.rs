use std::hint::black_box;

use alstream_bench::{noiseless, params, random_batch, study_counts};
use alstream_core::alpolicy::{AlDensity, StudySet};
use alstream_core::lattice::{d_spacing, sweep_grid};
use alstream_core::nnet::Dims;
use alstream_core::simulator::{simulate_batch, simulate_profile};
use alstream_core::{CellParams, ModelState, ParamSpace, Prior};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::Array2;

fn lattice(c: &mut Criterion) {
    let cell = CellParams::trigonal(3.9, 75.0);
    c.bench_function("d_spacing", |b| b.iter(|| d_spacing(black_box(&cell), [2, 1, 1])));
}

fn simulator(c: &mut Criterion) {
    let space = ParamSpace::e1();
    let cfg = noiseless();
    let cell = CellParams::tetragonal(3.9, 4.1);
    c.bench_function("simulate_profile", |b| b.iter(|| simulate_profile(black_box(&cell), &space, &cfg, 0)));
    let batch = params(8);
    let mut group = c.benchmark_group("simulate_batch");
    group.sample_size(10);
    group.bench_function("24", |b| b.iter(|| simulate_batch(black_box(&batch), &space, &cfg, 0)));
    group.finish();
}

fn network(c: &mut Criterion) {
    let dims = Dims { input: 512, h1: 256, h2: 64 };
    let model = ModelState::new(dims, 0).unwrap();
    let batch = random_batch(dims, 64).unwrap();
    c.bench_function("grad_64x512", |b| b.iter(|| model.grad(black_box(&batch))));
}

fn sampling(c: &mut Criterion) {
    let space = ParamSpace::e1();
    let sweep = sweep_grid(&space, &study_counts()).unwrap();
    let n = sweep.params.len();
    let study = StudySet::new(sweep, Array2::zeros((n, 1))).unwrap();
    let weights: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64).collect();
    let density = AlDensity::new(&study, weights, 1.0, Prior::Uniform, space).unwrap();
    c.bench_function("al_sample_1350", |b| {
        b.iter_batched(|| (), |_| density.sample(1350, black_box(3)), BatchSize::SmallInput)
    });
}

criterion_group!(benches, lattice, simulator, network, sampling);
criterion_main!(benches);
