use bregman_ab::{
    ab_solve, ab_step, em_solve, em_solve_newton, interior_start, rd_solve_minfree, RdProblem, Schedule, SolverConfig,
};
use bregman_ab_bench::{banded_problem, reference_problem, QuadraticFixture};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn config() -> SolverConfig {
    SolverConfig { max_iterations: 2000, ..SolverConfig::with_gamma(50.0) }
}

fn rd_solvers(c: &mut Criterion) {
    let problems: Vec<(String, RdProblem)> =
        vec![("reference".into(), reference_problem()), ("banded6".into(), banded_problem(6))];
    let mut group = c.benchmark_group("rd");
    group.sample_size(10);
    for (name, problem) in &problems {
        let start = interior_start(problem).expect("interior start");
        group.bench_with_input(BenchmarkId::new("minfree", name), problem, |b, p| {
            b.iter(|| rd_solve_minfree(black_box(p), &config(), 1e-4, &start).expect("solve"))
        });
        group.bench_with_input(BenchmarkId::new("em", name), problem, |b, p| {
            b.iter(|| em_solve(black_box(p), &config()).expect("solve"))
        });
        group.bench_with_input(BenchmarkId::new("em-newton-f2", name), problem, |b, p| {
            b.iter(|| em_solve_newton(black_box(p), &config(), Schedule::F2).expect("solve"))
        });
    }
    group.finish();
}

fn quadratic(c: &mut Criterion) {
    let fixture = QuadraticFixture::new();
    let objective = fixture.objective();
    let start = fixture.start();
    c.bench_function("ab_step/quadratic", |b| {
        b.iter(|| {
            ab_step(&fixture.system, &fixture.family, &objective, fixture.gamma, black_box(&start)).expect("step")
        })
    });
    let config = SolverConfig { max_iterations: 500, ..SolverConfig::with_gamma(fixture.gamma) };
    c.bench_function("ab_solve/quadratic", |b| {
        b.iter(|| ab_solve(&fixture.system, &fixture.family, &objective, &config, black_box(&start)).expect("solve"))
    });
}

criterion_group!(benches, rd_solvers, quadratic);
criterion_main!(benches);
