use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rbsde_bench::{snell, two_barrier, z_dependent};
use rbsde_core::rbsde::dyadic_schedule;
use rbsde_core::{penalization_sweep, snell_envelope, snell_oracle, solve_picard, solve_reflected, PicardConfig};

fn reflected(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_reflected");
    for depth in [4, 6, 8] {
        let inst = two_barrier(depth, 3);
        group.bench_with_input(BenchmarkId::from_parameter(depth), &inst, |b, i| {
            b.iter(|| solve_reflected(&i.space, &i.basis, black_box(&i.input)).unwrap())
        });
    }
    group.finish();
}

fn penalization(c: &mut Criterion) {
    let inst = two_barrier(4, 3);
    let schedule = dyadic_schedule(4, 12);
    c.bench_function("penalization_sweep/depth4", |b| {
        b.iter(|| penalization_sweep(&inst.space, &inst.basis, black_box(&inst.input), &schedule).unwrap())
    });
}

fn picard(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_picard");
    let inst = z_dependent(8);
    for windows in [1, 2, 4] {
        let config = PicardConfig {
            windows,
            ..PicardConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(windows), &config, |b, cfg| {
            b.iter(|| solve_picard(&inst.space, &inst.basis, black_box(&inst.input), *cfg).unwrap())
        });
    }
    group.finish();
}

fn stopping(c: &mut Criterion) {
    let (space, problem) = snell(10_000);
    c.bench_function("snell_envelope", |b| b.iter(|| snell_envelope(&space, black_box(&problem)).unwrap()));
    c.bench_function("snell_oracle", |b| {
        b.iter(|| snell_oracle(&space, black_box(&problem), 0, 10_000).unwrap())
    });
}

criterion_group!(benches, reflected, penalization, picard, stopping);
criterion_main!(benches);
