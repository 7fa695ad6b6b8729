use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use revanneal::integrators;
use revanneal::lindblad2::RateSet;
use revanneal::markov::{self, RateMatrix};
use revanneal::problems::builtin;
use revanneal::{Method, ReverseProtocol, StepPlan};
use revanneal_bench::{one_spin, one_spin_start, sat16, two_spin};

fn step_maps(c: &mut Criterion) {
    for (name, sys) in [("dim3", one_spin()), ("dim15", two_spin())] {
        c.bench_function(&format!("step_map_diag/{name}"), |b| {
            b.iter(|| sys.step_map_diag(black_box(0.7), black_box(1e-3)).unwrap())
        });
        c.bench_function(&format!("step_map_product/{name}"), |b| {
            b.iter(|| sys.step_map_product(black_box(0.7), black_box(1e-3)))
        });
    }
}

fn wts_run(c: &mut Criterion) {
    let sys = one_spin();
    let x0 = one_spin_start();
    let protocol = ReverseProtocol::wts(50.0, 0.7, "d").unwrap();
    let mut group = c.benchmark_group("wts_1spin_50us");
    group.sample_size(20);
    for method in [Method::Diagonalization, Method::ProductFormula] {
        let plan = StepPlan::new(1e-3, method).unwrap();
        group.bench_function(format!("{method:?}"), |b| {
            b.iter(|| integrators::propagate(&sys, plan, &protocol, &x0, &[]).unwrap())
        });
    }
    group.finish();
}

fn spectra(c: &mut Criterion) {
    let mut group = c.benchmark_group("enumerate_spectrum");
    group.sample_size(10);
    let chain = builtin("chain(16)").unwrap();
    group.bench_function("chain16", |b| b.iter(|| chain.enumerate_spectrum().unwrap()));
    let sat = sat16();
    group.bench_function("sat16", |b| b.iter(|| sat.enumerate_spectrum().unwrap()));
    group.finish();
}

fn markov_propagation(c: &mut Criterion) {
    let rates = RateSet::new([0.025, 0.0, 0.025, 0.025, 0.0125, 0.025, 0.0125]).unwrap();
    let w = RateMatrix::four_level(&rates).unwrap();
    let p0 = markov::indicator(4, 0);
    c.bench_function("markov_propagate/four_level", |b| {
        b.iter(|| w.propagate(black_box(&p0), black_box(500.0)).unwrap())
    });
}

criterion_group!(benches, step_maps, wts_run, spectra, markov_propagation);
criterion_main!(benches);
