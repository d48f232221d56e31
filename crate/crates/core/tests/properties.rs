//! Property tests for module invariants.

use std::collections::BTreeMap;

use proptest::prelude::*;

use erg_cbf::governor::advance;
use erg_cbf::linalg::{
    cholesky, lyapunov_residual, max_sym_eig, output_gain, solve_lyapunov, Matrix,
};
use erg_cbf::qp::{solve, QpProblem, QpStatus};
use erg_cbf::stl::{compile_barrier, parse_stl, BarrierOptions, Predicate};

fn square(n: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| Matrix::from_vec(n, n, v).unwrap())
}

/// `M − (‖M‖_F + c)·I` is Hurwitz since every eigenvalue has modulus at most `‖M‖_F`.
fn stable(n: usize) -> impl Strategy<Value = Matrix> {
    (square(n), 0.05..2.0f64).prop_map(move |(m, c)| {
        let shift = m.frobenius_norm() + c;
        &m - &Matrix::identity(n).scale(shift)
    })
}

fn spd(n: usize) -> impl Strategy<Value = Matrix> {
    square(n).prop_map(move |b| &(&b * &b.transpose()) + &Matrix::identity(n).scale(0.1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cholesky_reconstructs((n, p) in (1usize..=8).prop_flat_map(|n| (Just(n), spd(n)))) {
        let l = cholesky(&p).unwrap();
        let r = &(&l * &l.transpose()) - &p;
        prop_assert!(r.frobenius_norm() <= 1e-12 * p.frobenius_norm().max(1.0), "n = {n}");
    }

    #[test]
    fn max_eig_bounds_rayleigh(
        s in (1usize..=6).prop_flat_map(|n| square(n).prop_map(|m| m.symmetrized())),
        zs in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 6), 50),
    ) {
        let lmax = max_sym_eig(&s).unwrap();
        let n = s.rows();
        for z in zs {
            let z = &z[..n];
            let zz: f64 = z.iter().map(|v| v * v).sum();
            if zz > 1e-12 {
                prop_assert!(lmax >= s.quad_form(z) / zz - 1e-12);
            }
        }
    }

    #[test]
    fn lyapunov_residual_is_small(
        (a, q) in (1usize..=6).prop_flat_map(|n| (stable(n), spd(n))),
    ) {
        let p = solve_lyapunov(&a, &q).unwrap();
        prop_assert!(lyapunov_residual(&a, &p, &q) <= 1e-9 * q.frobenius_norm());
    }

    #[test]
    fn output_bound_holds_with_offsets(
        (p, c) in (2usize..=6).prop_flat_map(|n| (spd(n), prop::collection::vec(-1.0..1.0f64, n))),
        xs in prop::collection::vec((prop::collection::vec(-3.0..3.0f64, 6), prop::collection::vec(-3.0..3.0f64, 6)), 50),
    ) {
        let n = p.rows();
        let cm = Matrix::from_vec(1, n, c.clone()).unwrap();
        let l = output_gain(&p, &cm).unwrap();
        for (x, xbar) in xs {
            let e: Vec<f64> = (0..n).map(|i| x[i] - xbar[i]).collect();
            let ce: f64 = c.iter().zip(&e).map(|(a, b)| a * b).sum();
            prop_assert!(ce * ce <= l * l * p.quad_form(&e) + 1e-9);
        }
    }

    #[test]
    fn qp_beats_random_feasible_points(
        p in 1usize..=3,
        seed_rows in prop::collection::vec((prop::collection::vec(-1.0..1.0f64, 3), 0.0..1.0f64), 1..12),
        f in prop::collection::vec(-5.0..5.0f64, 3),
        x0 in prop::collection::vec(-1.0..1.0f64, 3),
        hs in prop::collection::vec(-1.0..1.0f64, 9),
        probes in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 3), 100),
    ) {
        let b = Matrix::from_vec(3, 3, hs).unwrap();
        let h_full = &b * &b.transpose();
        let mut h = Matrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                h[(i, j)] = h_full[(i, j)];
            }
        }
        let h = h.symmetrized();
        let mut pr = QpProblem::new(h, f[..p].to_vec())
            .with_bounds(vec![-10.0; p], vec![10.0; p]);
        for (a, s) in &seed_rows {
            let ax: f64 = (0..p).map(|i| a[i] * x0[i]).sum();
            pr.push_row(&a[..p], ax + s);
        }
        let sol = solve(&pr).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        let best = pr.objective(&sol.u);
        for probe in probes {
            // Pull the probe toward x0 until it is feasible.
            let mut t = 1.0;
            let pt = loop {
                let pt: Vec<f64> = (0..p).map(|i| x0[i] + t * (probe[i] - x0[i])).collect();
                let ok = seed_rows.iter().zip(&pr.ineq_rhs).all(|((a, _), rhs)| {
                    (0..p).map(|i| a[i] * pt[i]).sum::<f64>() <= *rhs
                });
                if ok {
                    break pt;
                }
                t *= 0.5;
            };
            prop_assert!(best <= pr.objective(&pt) + 1e-9);
        }
        let again = solve(&pr).unwrap();
        prop_assert_eq!(
            sol.u.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            again.u.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn governor_displacement_is_bilinear(
        g in prop::collection::vec(-10.0..10.0f64, 2),
        u in prop::collection::vec(-3.0..3.0f64, 2),
        delta in 0.0..5.0f64,
    ) {
        let once = advance(&g, &u, delta, 0.01);
        let twice = advance(&g, &u, 2.0 * delta, 0.01);
        for i in 0..2 {
            prop_assert!(((twice[i] - g[i]) - 2.0 * (once[i] - g[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn positive_conjunction_means_positive_terms(
        g in prop::collection::vec(-6.0..6.0f64, 2),
        t in 0.0..40.0f64,
        smoothing in 1.0..5.0f64,
    ) {
        let mut regions = BTreeMap::new();
        regions.insert("a".to_string(), Predicate::reach(vec![3.0, 0.0], 1.0));
        regions.insert("b".to_string(), Predicate::reach(vec![-2.0, 2.0], 1.5));
        regions.insert("s".to_string(), Predicate::stay(vec![0.0, 0.0], 8.0));
        let f = parse_stl("F[5,20] a & F[20,40] b & G[0,40] s", &regions).unwrap();
        let opts = BarrierOptions { smoothing, initial_margin: Some(3.0), ..BarrierOptions::default() };
        let bar = compile_barrier(&f, &[0.0, 0.0], &opts).unwrap();
        if let Some(e) = bar.evaluate(&g, t) {
            let terms = bar.term_values(&g, t);
            let active: Vec<f64> = terms.into_iter().filter(|v| !v.is_nan()).collect();
            let m = active.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!(e.value <= m + 1e-12);
            prop_assert!(m <= e.value + (active.len() as f64).ln() / smoothing + 1e-12);
            if e.value > 0.0 {
                prop_assert!(active.iter().all(|v| *v > 0.0));
            }
        }
    }
}
