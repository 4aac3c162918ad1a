use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fracshape::shape::Neighborhood;
use fracshape::solve::smallest_eigenvalues;
use fracshape::{
    brute_force_min, evaluate_cost, exchange_search, solve_torsion, BoxGrid, CostSpec, Discretization, FracParam,
    KernelTable, SetMask,
};

fn kernel_tables(c: &mut Criterion) {
    let mut group = c.benchmark_group("kernel_table");
    for (name, grid) in [
        ("1d_512", BoxGrid::interval(0.0, 1.0, 512).unwrap()),
        ("2d_32x32", BoxGrid::square(0.0, 1.0, 32).unwrap()),
    ] {
        let param = FracParam::new(grid.dim(), 0.5).unwrap();
        group.bench_function(name, |b| b.iter(|| KernelTable::new(black_box(&grid), &param).unwrap()));
    }
    group.finish();
}

fn assembly_and_solves(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    for cells in [128usize, 512] {
        let grid = BoxGrid::interval(-1.0, 1.0, cells).unwrap();
        let disc = Discretization::new(&grid, &FracParam::new(1, 0.5).unwrap()).unwrap();
        let full = SetMask::full(&grid);
        group.bench_with_input(BenchmarkId::new("assemble_1d", cells), &full, |b, m| {
            b.iter(|| disc.assemble(black_box(m)).unwrap())
        });
        let op = disc.assemble(&full).unwrap();
        group.bench_with_input(BenchmarkId::new("torsion_1d", cells), &op, |b, op| {
            b.iter(|| solve_torsion(black_box(op)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("eigenvalues_1d", cells), &op, |b, op| {
            b.iter(|| smallest_eigenvalues(black_box(op), 4).unwrap())
        });
    }
    group.finish();
}

fn shape_search(c: &mut Criterion) {
    let mut group = c.benchmark_group("shape");
    group.sample_size(10);
    let grid = BoxGrid::square(0.0, 1.0, 5).unwrap();
    let disc = Discretization::new(&grid, &FracParam::new(2, 0.5).unwrap()).unwrap();
    let spec = CostSpec::single(1, 6.0 / 25.0).unwrap();
    let init = SetMask::from_indices(&grid, &[0, 1, 2, 3, 4, 24]).unwrap();
    group.bench_function("cost_eval_2d_6cells", |b| {
        b.iter(|| evaluate_cost(&spec, &disc, black_box(&init)).unwrap())
    });
    group.bench_function("exchange_2d_5x5_m6", |b| {
        b.iter(|| exchange_search(&spec, &disc, black_box(&init), 1000, Neighborhood::All).unwrap())
    });
    let line = BoxGrid::interval(0.0, 1.0, 16).unwrap();
    let line_disc = Discretization::new(&line, &FracParam::new(1, 0.5).unwrap()).unwrap();
    let line_spec = CostSpec::single(1, 0.5).unwrap();
    group.bench_function("brute_force_1d_16_choose_8", |b| {
        b.iter(|| brute_force_min(black_box(&line_spec), &line_disc).unwrap())
    });
    group.finish();
}

criterion_group!(benches, kernel_tables, assembly_and_solves, shape_search);
criterion_main!(benches);
