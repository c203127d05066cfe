use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use spmoran::birth_death::{ld_integral, log_mean_hitting_time_up, pi_products_log};
use spmoran::bounds::{conditioned_rates, CoupledTriple};
use spmoran::moran::{moran_step_full, occupancy_step};
use spmoran::quasispecies::{rho_star_closed, rho_star_recurrence};
use spmoran::{replica_rng, BoundingChainKind, BoundingMaps, EkChain, LumpedMutationMatrix, Population};
use spmoran_bench::{mixed_occupancy, regime_params};

fn mutation_matrix(c: &mut Criterion) {
    let mut g = c.benchmark_group("lumped_mutation_matrix");
    for ell in [50usize, 200, 1000] {
        let p = regime_params(ell, 0);
        g.bench_with_input(BenchmarkId::from_parameter(ell), &p, |b, p| b.iter(|| LumpedMutationMatrix::new(black_box(p))));
    }
    g.finish();
}

fn steps(c: &mut Criterion) {
    let p = regime_params(50, 2);
    let mh = LumpedMutationMatrix::new(&p);
    let mut rng = replica_rng(1, 0);
    let mut o = mixed_occupancy(&p);
    c.bench_function("occupancy_step l=50 m=150", |b| b.iter(|| occupancy_step(&mut o, &mh, p.sigma, &mut rng)));

    let mut x = Population::from_occupancy(&mixed_occupancy(&p), p.kappa);
    c.bench_function("moran_step_full l=50 m=150", |b| b.iter(|| moran_step_full(&mut x, &p, &mut rng)));

    let mut tri = CoupledTriple::new(Arc::new(BoundingMaps::new(&p).unwrap()), mixed_occupancy(&p));
    c.bench_function("coupled_triple_step l=50 m=150", |b| b.iter(|| tri.step(&mut rng)));

    let ek = EkChain::new(BoundingChainKind::Upper, &p).unwrap();
    let z = mixed_occupancy(&p).head(2);
    c.bench_function("ek_row K=2 m=150", |b| b.iter(|| ek.row(black_box(&z))));
}

fn formulas(c: &mut Criterion) {
    c.bench_function("rho_star_closed k=30 sigma=1e6", |b| b.iter(|| rho_star_closed(1e6, black_box(0.5), 30, 1e-15)));
    c.bench_function("rho_star_recurrence k=30", |b| b.iter(|| rho_star_recurrence(5.0, black_box(0.5), 30)));
    c.bench_function("ld_integral", |b| b.iter(|| ld_integral(0.5, 4.0, black_box(0.4))));

    let mut g = c.benchmark_group("birth_death");
    for m in [200usize, 2000, 20000] {
        let p = spmoran::Parameters::from_a(50, m, 0.5, 4.0, 2, 0).unwrap();
        let rates = conditioned_rates(0, BoundingChainKind::Lower, &LumpedMutationMatrix::new(&p), &p).unwrap();
        let spec = rates.spec_at(&[]).unwrap();
        g.bench_with_input(BenchmarkId::new("pi_products_log", m), &spec, |b, s| b.iter(|| pi_products_log(s)));
        g.bench_with_input(BenchmarkId::new("log_mean_hitting_time_up", m), &spec, |b, s| {
            b.iter(|| log_mean_hitting_time_up(s, 0, s.m()))
        });
    }
    g.finish();
}

criterion_group!(benches, mutation_matrix, steps, formulas);
criterion_main!(benches);
