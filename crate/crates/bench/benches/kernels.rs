use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use std::hint::black_box;

use inelastic_bench::{constants, grid, particles};
use inelastic_core::diagnostics::{relative_entropy, DensityEstimate, GridSpec};
use inelastic_core::dsmc::step;
use inelastic_core::kinetics::{RestitutionParams, WeightSpec};
use inelastic_core::spectral::{assemble_l, isotropic_gap, assemble_pieces, RadialProfile};
use inelastic_core::steady::CollisionTensor;

fn dsmc_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("dsmc_step");
    g.sample_size(20);
    for n in [10_000usize, 100_000] {
        let (ens, cfg) = particles(n, 0.9);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter_batched(|| ens.clone(), |mut e| step(&mut e, 0.01, &cfg, None).unwrap(), BatchSize::LargeInput)
        });
    }
    g.finish();
}

fn operators(c: &mut Criterion) {
    let k = constants();
    let mut g = c.benchmark_group("operators");
    g.sample_size(10);
    for n in [64usize, 128] {
        let gr = grid(n);
        g.bench_with_input(BenchmarkId::new("assemble_l", n), &gr, |b, gr| {
            b.iter(|| assemble_l(gr, &k, WeightSpec::new(2.0).unwrap()).unwrap())
        });
        let pieces = assemble_pieces(&gr, &k, &RadialProfile::maxwellian(&gr), RestitutionParams::elastic()).unwrap();
        let l = pieces.l_alpha(&gr, WeightSpec::new(2.0).unwrap());
        g.bench_with_input(BenchmarkId::new("isotropic_gap", n), &l.matrix, |b, m| b.iter(|| isotropic_gap(black_box(m))));
    }
    g.finish();
}

fn tensor(c: &mut Criterion) {
    let mut g = c.benchmark_group("collision_tensor");
    g.sample_size(10);
    let gr = grid(64);
    let alpha = RestitutionParams::new(0.9).unwrap();
    g.bench_function("build_64", |b| b.iter(|| CollisionTensor::build(&gr, alpha).unwrap()));
    let t = CollisionTensor::build(&gr, alpha).unwrap();
    let f = gr.maxwellian();
    g.bench_function("apply_64", |b| b.iter(|| t.apply(black_box(&f))));
    g.finish();
}

fn entropy(c: &mut Criterion) {
    let (ens, _) = particles(100_000, 1.0);
    let bath = inelastic_bench::bath();
    let spec = GridSpec::RadialUniform { center: bath.u0, bins: 32, r_max: 7.0 };
    c.bench_function("relative_entropy_1e5", |b| {
        b.iter(|| {
            let f = DensityEstimate::from_samples(ens.velocities(), &spec).unwrap();
            relative_entropy(&f, &bath).unwrap()
        })
    });
}

criterion_group!(benches, dsmc_step, operators, tensor, entropy);
criterion_main!(benches);
