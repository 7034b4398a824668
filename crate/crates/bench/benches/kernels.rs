use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use densq::dp::{solve, DpOptions, StateGrids};
use densq::filter::{filter_step, FactorGrid, GriddedDensity, Kernels};
use densq::market::{ModelParams, Utilities};
use densq::numeric::linspace;
use densq::quantizer::{build_initial_codebook, project, ReturnNodeSet};

fn setup() -> (ModelParams, Arc<FactorGrid>, Kernels) {
    let p = ModelParams::default();
    let grid = Arc::new(FactorGrid::with_step(-1.5, 1.5, 0.05).unwrap());
    let k = Kernels::new(&p, grid.clone());
    (p, grid, k)
}

fn filter(c: &mut Criterion) {
    let (_, grid, k) = setup();
    let rho = GriddedDensity::gaussian(grid, 0.1, 0.2).unwrap();
    c.bench_function("filter_step/61", |b| {
        b.iter(|| filter_step(black_box(&rho), black_box(0.03), &k).unwrap())
    });
}

fn projection(c: &mut Criterion) {
    let (_, grid, _) = setup();
    let q = build_initial_codebook(&linspace(-1.5, 1.5, 13), &[0.1, 0.3, 0.5, 0.7, 0.9], grid.clone())
        .unwrap();
    let rho = GriddedDensity::gaussian(grid, 0.17, 0.42).unwrap();
    c.bench_function("project/65x61", |b| b.iter(|| project(black_box(&rho), &q).unwrap()));
}

fn small_solve(c: &mut Criterion) {
    let (mut p, grid, _) = setup();
    p.horizon = 3;
    let k = Kernels::new(&p, grid.clone());
    let q = build_initial_codebook(&[-0.5, 0.0, 0.5], &[0.3, 0.6], grid).unwrap();
    let grids = StateGrids::new(
        StateGrids::wealth_grid(10.0, 9),
        Arc::new(q),
        ReturnNodeSet::equispaced(21, -3.0, 3.0, p.eps_density).unwrap(),
        linspace(0.0, 1.0, 11),
    )
    .unwrap();
    let u = Utilities::default();
    let mut group = c.benchmark_group("solve");
    group.sample_size(20);
    group.bench_function("T3_9x6", |b| {
        b.iter(|| solve(&grids, &k, &u, DpOptions::default()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, filter, projection, small_solve);
criterion_main!(benches);
