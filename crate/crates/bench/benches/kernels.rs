use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use twistmetric::analysis::{differential, laurent_extract};
use twistmetric::energy_forms::{energy, tension};
use twistmetric::field::{EnergyKind, MetricField};
use twistmetric::pd_geometry::{distance, CMat, PdMatrix};
use twistmetric::solver::{perturbed_start, two_step_minimize, SolverConfig};
use twistmetric::Complex64;
use twistmetric_bench::{solved, sphere_k1, twisted_torus};

fn pd(a: f64, b: f64, c: f64) -> PdMatrix {
    let m = CMat::from_row_slice(
        3,
        3,
        &[
            Complex64::new(a, 0.0),
            Complex64::new(0.2, 0.1),
            Complex64::new(0.0, 0.3),
            Complex64::new(0.2, -0.1),
            Complex64::new(b, 0.0),
            Complex64::new(0.1, 0.0),
            Complex64::new(0.0, -0.3),
            Complex64::new(0.1, 0.0),
            Complex64::new(c, 0.0),
        ],
    );
    PdMatrix::new(m).expect("positive definite")
}

fn pointwise(c: &mut Criterion) {
    let (x, y) = (pd(2.0, 1.0, 3.0), pd(1.0, 4.0, 0.5));
    c.bench_function("distance_3x3", |b| b.iter(|| distance(&x, &y).unwrap()));
}

fn field_ops(c: &mut Criterion) {
    let disc = twisted_torus(32);
    let f = perturbed_start(&disc, 0.3, 1);
    c.bench_function("energy_torus_n2", |b| {
        b.iter(|| energy(&f, None, EnergyKind::Modified).unwrap())
    });
    c.bench_function("tension_torus_n2", |b| {
        b.iter(|| tension(&f, None, EnergyKind::Modified).unwrap())
    });
    let disc = sphere_k1(48);
    let f = solved(&disc);
    c.bench_function("differential_sphere", |b| {
        b.iter(|| differential(&f).unwrap())
    });
    let phi = differential(&f).unwrap();
    c.bench_function("laurent_extract", |b| {
        b.iter(|| laurent_extract(&disc, &phi, 0, 4, 0.25).unwrap())
    });
}

fn solves(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    let cfg = SolverConfig::default();
    let disc = sphere_k1(32);
    g.bench_function("diagonal_kernel_sphere", |b| {
        b.iter_batched(
            || MetricField::model(&disc),
            |f| two_step_minimize(f, &cfg).unwrap(),
            BatchSize::LargeInput,
        )
    });
    let disc = twisted_torus(24);
    g.bench_function("matrix_kernel_torus", |b| {
        b.iter_batched(
            || perturbed_start(&disc, 0.5, 2),
            |f| two_step_minimize(f, &cfg).unwrap(),
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

criterion_group!(benches, pointwise, field_ops, solves);
criterion_main!(benches);
