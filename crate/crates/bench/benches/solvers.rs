use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use glevy_bench::{
    lattice, mixed_set, quadratic_payoff, quadratic_set, space, two_time_functional,
};
use glevy_core::cylinder::expect;
use glevy_core::operator::ControlChoice;
use glevy_core::pide::{solve_backward, Grid, TerminalFunction};
use glevy_core::sim::{mc_expect, ControlPolicy, Mesh};

fn pide(c: &mut Criterion) {
    let set = quadratic_set();
    let phi = TerminalFunction::from_payoff(&quadratic_payoff(), None).unwrap();
    let mut group = c.benchmark_group("solve_backward");
    group.sample_size(10);
    for nx in [201, 401, 801] {
        let grid = Grid::with_cfl(space(nx), 0.5, &set).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(nx), &grid, |b, grid| {
            b.iter(|| solve_backward(&set, &phi, grid).unwrap().u00())
        });
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let set = mixed_set();
    let payoff = quadratic_payoff();
    let mesh = Mesh::uniform(0.5, 0.01).unwrap();
    let policy = ControlPolicy::Constant(ControlChoice::new(Some(1), 1));
    let mut group = c.benchmark_group("mc_expect");
    group.sample_size(10);
    group.bench_function("10k_paths_50_steps", |b| {
        b.iter(|| {
            mc_expect(&set, &policy, |x| payoff.eval(&[x]), 10_000, &mesh, 7)
                .unwrap()
                .mean
        })
    });
    group.finish();
}

fn cylinder(c: &mut Criterion) {
    let set = mixed_set();
    let xi = two_time_functional();
    let cfg = lattice(121, 21);
    let mut group = c.benchmark_group("cylinder_expect");
    group.sample_size(10);
    group.bench_function("two_times", |b| b.iter(|| expect(&set, &xi, &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, pide, monte_carlo, cylinder);
criterion_main!(benches);
