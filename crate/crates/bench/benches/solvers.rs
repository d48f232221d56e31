use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use erg_cbf::governor::{assemble_navigation_qp, governor_step, GovernorContext, GovernorState};
use erg_cbf::linalg::{solve_lyapunov, Matrix};
use erg_cbf::qp::{solve, QpProblem, QpSolver};
use erg_cbf::scenario::ScenarioConfig;
use erg_cbf::sim::{prepare, simulate, Prepared};

fn scenario(name: &str) -> Prepared {
    let path = format!("{}/../../scenarios/{name}", env!("CARGO_MANIFEST_DIR"));
    let cfg = ScenarioConfig::from_toml(&std::fs::read_to_string(path).unwrap()).unwrap();
    prepare(&cfg).unwrap()
}

fn lyapunov(c: &mut Criterion) {
    let mut group = c.benchmark_group("lyapunov");
    for n in [4usize, 6, 12] {
        // Upper-triangular with a stable diagonal.
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = -1.0 - i as f64 * 0.1;
            for j in i + 1..n {
                a[(i, j)] = 0.3;
            }
        }
        let q = Matrix::identity(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| solve_lyapunov(black_box(&a), black_box(&q)).unwrap())
        });
    }
    group.finish();
}

fn qp(c: &mut Criterion) {
    let mut problem = QpProblem::new(Matrix::identity(2).scale(2.0), vec![-1.0, 0.5])
        .with_bounds(vec![-4.0; 2], vec![4.0; 2]);
    problem.push_row(&[1.0, 0.4], 0.3);
    problem.push_row(&[-0.2, 1.0], 0.1);
    problem.push_row(&[0.7, -0.7], 0.5);
    c.bench_function("qp/cold", |b| b.iter(|| solve(black_box(&problem)).unwrap()));
    let mut solver = QpSolver::default();
    c.bench_function("qp/warm", |b| {
        b.iter(|| solver.solve(black_box(&problem)).unwrap())
    });
}

fn governor(c: &mut Criterion) {
    let p = scenario("double_integrator.scenario");
    let cfg = &p.config.governor;
    c.bench_function("governor/assemble", |b| {
        b.iter(|| {
            assemble_navigation_qp(black_box(&p.g0), 1.0, 2.0, &p.env, p.barrier.as_ref(), cfg, p.dt())
                .unwrap()
        })
    });
    let ctx = GovernorContext {
        p: &p.certificate.p,
        l: p.certificate.l,
        env: &p.env,
        barrier: p.barrier.as_ref(),
        cfg,
        dt: p.dt(),
    };
    let state = GovernorState::new(p.g0.clone());
    let mut solver = QpSolver::default();
    c.bench_function("governor/step", |b| {
        b.iter(|| governor_step(&state, black_box(&p.x0), &ctx, &mut solver).unwrap())
    });
}

fn closed_loop(c: &mut Criterion) {
    let mut group = c.benchmark_group("closed_loop");
    group.sample_size(10);
    for name in ["double_integrator.scenario", "quadrotor.scenario"] {
        let p = scenario(name);
        group.bench_function(name, |b| b.iter(|| simulate(black_box(&p))));
    }
    group.finish();
}

criterion_group!(benches, lyapunov, qp, governor, closed_loop);
criterion_main!(benches);
