use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use harmonic_lse::asymptotics::SelfConvolution;
use harmonic_lse::diagrams::{hermite_product_moment, CorrelationMatrix};
use harmonic_lse::estimator::{estimate, SeparationPolicy};
use harmonic_lse::simulate::{observe, Harmonic, HarmonicModel, ObserveOptions, PathGenerator, SamplingGrid};
use harmonic_lse::spectral::{bessel_k, NoiseSpec};
use harmonic_lse::subordination::TransformSpec;

fn spectral(c: &mut Criterion) {
    c.bench_function("bessel_k(0.3, 2.5)", |b| {
        b.iter(|| bessel_k(black_box(0.3), black_box(2.5)))
    });
    let spec = NoiseSpec::single(1.5, 0.0).unwrap();
    c.bench_function("self_convolution k=2 cold", |b| {
        b.iter(|| SelfConvolution::new(spec.clone()).eval(2, black_box(1.3)).unwrap())
    });
}

fn diagrams(c: &mut Criterion) {
    let corr = CorrelationMatrix::uniform(4, 0.3).unwrap();
    c.bench_function("moment (2,2,2,2)", |b| {
        b.iter(|| hermite_product_moment(black_box(&[2, 2, 2, 2]), &corr))
    });
}

fn simulation(c: &mut Criterion) {
    let model = HarmonicModel::new(vec![Harmonic::new(1.0, 0.5, 1.3)], (0.1, 3.0)).unwrap();
    let spec = NoiseSpec::single(1.5, 0.0).unwrap();
    let transform = TransformSpec::identity();
    let mut group = c.benchmark_group("observe+estimate");
    group.sample_size(20);
    for horizon in [1024.0, 4096.0] {
        let grid = SamplingGrid::new(horizon, 0.25).unwrap();
        let generator = PathGenerator::new(&model, &spec, &transform, &grid, ObserveOptions::default()).unwrap();
        group.bench_function(format!("simulate T={horizon}"), |b| {
            b.iter(|| generator.observe(black_box(7)))
        });
        let path = observe(&model, &spec, &transform, &grid, 7, ObserveOptions::default()).unwrap();
        group.bench_function(format!("estimate T={horizon}"), |b| {
            b.iter(|| estimate(&path, 1, (0.1, 3.0), &SeparationPolicy::default()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, spectral, diagrams, simulation);
criterion_main!(benches);
