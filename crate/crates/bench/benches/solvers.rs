use std::f64::consts::PI;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use kdvlab::banded::BandLu;
use kdvlab::hum::{assemble_gramian, ControlConfig};
use kdvlab::laplace::kernel_ratios;
use kdvlab::pde::{assemble_operator, linear_terminal, BcConfig};
use kdvlab::{BoundarySignals, KdvParams, RunConfig, ScalarField, TimeSignal};

fn banded(c: &mut Criterion) {
    let mut g = c.benchmark_group("cn_matrix");
    for n in [128usize, 512, 2048] {
        let cfg = RunConfig::new(0.0, 2.0, n, 1.0, 2000).unwrap();
        let op = assemble_operator(&KdvParams::linear(0.0), &cfg.sgrid, &BcConfig::neumann([false, true, false])).unwrap();
        let lhs = op.matrix.shifted(-0.5 * cfg.tgrid.dt(), 1.0);
        let lu = BandLu::factor(&lhs).unwrap();
        g.bench_with_input(BenchmarkId::new("factor", n), &lhs, |b, m| b.iter(|| BandLu::factor(black_box(m)).unwrap()));
        let rhs: Vec<f64> = (0..=n).map(|i| (i as f64).sin()).collect();
        g.bench_with_input(BenchmarkId::new("solve", n), &rhs, |b, r| {
            b.iter(|| {
                let mut x = r.clone();
                lu.solve_in_place(&mut x);
                x
            })
        });
    }
    g.finish();
}

fn forward(c: &mut Criterion) {
    let cfg = RunConfig::default();
    let u0 = ScalarField::from_fn(cfg.sgrid, |x| (-20.0 * (x - 1.0f64).powi(2)).exp());
    let sig = BoundarySignals::h2(TimeSignal::from_fn(cfg.tgrid, |t| (PI * t).sin().powi(2)));
    c.bench_function("forward_solve_N128_M2000", |b| b.iter(|| linear_terminal(&u0, &sig, None, &cfg).unwrap()));
}

fn gramian(c: &mut Criterion) {
    let mut g = c.benchmark_group("gramian");
    g.sample_size(10);
    let cfg = RunConfig::new(0.0, 2.0, 64, 1.0, 500).unwrap();
    g.bench_function("h2_N64_M500", |b| b.iter(|| assemble_gramian(&cfg, &ControlConfig::h2()).unwrap()));
    g.finish();
}

fn ratios(c: &mut Criterion) {
    c.bench_function("kernel_ratios", |b| b.iter(|| kernel_ratios(black_box(37.0), 1.0).unwrap()));
}

criterion_group!(benches, banded, forward, gramian, ratios);
criterion_main!(benches);
