use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use cylscat::cross_section::{transverse_spectrum, ComponentSpec, CrossSectionSpec};
use cylscat::hamiltonian::lap::ProbeSettings;
use cylscat::hamiltonian::{assemble_full, weighted_resolvent_probe, Weight};
use cylscat::scattering::{smatrix_ode, smatrix_stationary, StationarySettings};
use cylscat::timedelay::CrankNicolson;
use cylscat::C64;
use cylscat_bench::scenario;

fn bench_cross_section(c: &mut Criterion) {
    let mut group = c.benchmark_group("transverse_spectrum");
    for res in [64usize, 128, 256] {
        let spec = CrossSectionSpec::single(ComponentSpec::circle(1.0, res));
        group.bench_with_input(BenchmarkId::new("circle", res), &spec, |b, spec| b.iter(|| transverse_spectrum(black_box(spec), 9).unwrap()));
    }
    group.finish();
}

fn bench_smatrix(c: &mut Criterion) {
    let mut group = c.benchmark_group("smatrix");
    group.sample_size(10);
    for name in ["barrier.toml", "mixing3.toml"] {
        let (cfg, s) = scenario(name);
        let lambda = 0.5 * (cfg.smatrix.lambda_min + cfg.smatrix.lambda_max);
        group.bench_with_input(BenchmarkId::new("ode", name), &s, |b, s| b.iter(|| smatrix_ode(s, black_box(lambda)).unwrap()));
        group.bench_with_input(BenchmarkId::new("stationary", name), &s, |b, s| {
            b.iter(|| smatrix_stationary(s, black_box(lambda), &StationarySettings::default()).unwrap())
        });
    }
    group.finish();
}

fn bench_propagation(c: &mut Criterion) {
    let (_, s) = scenario("barrier.toml");
    let h = assemble_full(&s).unwrap();
    let cn = CrankNicolson::new(&h, 0.02).unwrap();
    let mut psi: Vec<C64> = s.grid.xs().iter().map(|&x| C64::from_polar((-x * x).exp(), 2.0 * x)).collect();
    c.bench_function("crank_nicolson_step/barrier", |b| b.iter(|| cn.step(black_box(&mut psi))));
}

fn bench_resolvent(c: &mut Criterion) {
    let (cfg, s) = scenario("barrier.toml");
    let h = assemble_full(&s).unwrap();
    let w = Weight::position(&h, cfg.lap.s);
    let mut group = c.benchmark_group("resolvent_probe");
    group.sample_size(10);
    group.bench_function("barrier", |b| {
        b.iter(|| weighted_resolvent_probe(&h, cfg.lap.lambda, cfg.lap.s, 1, &cfg.lap.epsilons, &w, ProbeSettings::default()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_cross_section, bench_smatrix, bench_propagation, bench_resolvent);
criterion_main!(benches);
