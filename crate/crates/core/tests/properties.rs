use krasovskii::control::{controller_output, controller_storage, KrasovskiiController};
use krasovskii::models::{boost_converter, parallel_rlc_zip, BoostParams, RlcZipParams};
use krasovskii::optim::{build_primal_dual, kkt_residual, solve_kkt_direct, ConvexProgram};
use krasovskii::passivity::{gradient_margins, prop1_margins, storage, supply_output};
use krasovskii::{CheckTolerances, StorageMetric};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn rel_close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
    let scale = a.amax().max(b.amax()).max(1.0);
    (a - b).amax() <= tol * scale
}

fn boost_params() -> impl Strategy<Value = BoostParams> {
    (1e-3..0.1, 1e-4..1e-2, 0.01..2.0, 0.005..0.5, 1.0..48.0)
        .prop_map(|(l, c, r, g, vs)| BoostParams { l, c, r, g, vs })
}

fn rlc_params() -> impl Strategy<Value = RlcZipParams> {
    (
        1e-3..0.1,
        1e-4..1e-2,
        0.01..2.0,
        0.005..0.5,
        0.01..5.0,
        0.0..1.0,
    )
        .prop_map(|(l, c, r, g, p_bar, i_s)| RlcZipParams {
            l,
            c,
            r,
            g,
            p_bar,
            i_s: i_s + 1e-3,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn boost_ode_matches_port_hamiltonian(p in boost_params(), i in -20.0..20.0, v in -60.0..60.0, u in 0.0..1.0) {
        let (ode, ph) = boost_converter(&p).unwrap();
        let x = DVector::from_vec(vec![i, v]);
        let u = DVector::from_vec(vec![u]);
        let a = ode.eval_vector_field(&x, &u).unwrap();
        let b = ph.vector_field(&x, &u).unwrap();
        prop_assert!(rel_close(&a, &b, 1e-12), "{a} vs {b}");
    }

    #[test]
    fn rlc_ode_matches_gradient_form(p in rlc_params(), i in -5.0..5.0, v in 0.1..30.0, u in -20.0..20.0) {
        let (ode, grad) = parallel_rlc_zip(&p).unwrap();
        let x = DVector::from_vec(vec![i, v]);
        let u = DVector::from_vec(vec![u]);
        let a = ode.eval_vector_field(&x, &u).unwrap();
        let b = grad.vector_field(&x, &u).unwrap();
        prop_assert!(rel_close(&a, &b, 1e-12), "{a} vs {b}");
    }

    #[test]
    fn extension_stacks_field_and_rate_exactly(p in boost_params(), i in -20.0..20.0, v in -60.0..60.0, u in 0.0..1.0, ud in -10.0..10.0) {
        let (ode, _) = boost_converter(&p).unwrap();
        let f = ode.eval_vector_field(&DVector::from_vec(vec![i, v]), &DVector::from_vec(vec![u])).unwrap();
        let z = DVector::from_vec(vec![i, v, u]);
        let dz = ode.extend().vector_field(&z, &DVector::from_vec(vec![ud])).unwrap();
        prop_assert_eq!(dz[0], f[0]);
        prop_assert_eq!(dz[1], f[1]);
        prop_assert_eq!(dz[2], ud);
    }

    #[test]
    fn storage_is_nonnegative_and_supply_matches_metric(p in boost_params(), i in -20.0..20.0, v in -60.0..60.0, u in 0.0..1.0) {
        let (ode, _) = boost_converter(&p).unwrap();
        let q = StorageMetric::new(p.energy_metric()).unwrap();
        let x = DVector::from_vec(vec![i, v]);
        let uv = DVector::from_vec(vec![u]);
        let s = storage(&ode, &q, &x, &uv).unwrap();
        prop_assert!(s >= 0.0);
        let f = ode.eval_vector_field(&x, &uv).unwrap();
        let oracle_s = 0.5 * (p.l * f[0] * f[0] + p.c * f[1] * f[1]);
        prop_assert!((s - oracle_s).abs() <= 1e-12 * oracle_s.max(1.0));
        // g = (V/L, −I/C): gᵀQf = V·f_I − I·f_V.
        let h = supply_output(&ode, &q, &x, &uv).unwrap();
        let oracle_h = v * f[0] - i * f[1];
        prop_assert!((h[0] - oracle_h).abs() <= 1e-12 * oracle_h.abs().max(1.0));
    }

    #[test]
    fn gradient_pass_implies_sufficient_condition(p in rlc_params(), i in -5.0..5.0, v in 0.1..30.0) {
        let (ode, grad) = parallel_rlc_zip(&p).unwrap();
        let tol = CheckTolerances::default();
        let g = gradient_margins(&grad, &p.gradient_weight(), &p.potential_hessian(v));
        if g.negativity <= tol.negativity && g.equality <= tol.zero {
            let d = p.pseudo_metric();
            let q = StorageMetric::new(&d * p.gradient_weight() * &d).unwrap();
            let m = prop1_margins(&ode, &q, &DVector::from_vec(vec![i, v])).unwrap();
            prop_assert!(m.negativity <= tol.negativity && m.equality <= tol.zero, "{m:?}");
        }
    }

    #[test]
    fn analytic_jacobians_match_finite_differences(p in boost_params(), r in rlc_params(), i in -5.0..5.0, v in 0.5..30.0) {
        let x = DVector::from_vec(vec![i, v]);
        let (boost, _) = boost_converter(&p).unwrap();
        let (rlc, _) = parallel_rlc_zip(&r).unwrap();
        for sys in [&boost, &rlc] {
            let an = sys.eval_jacobians(&x).unwrap();
            let fd = sys.finite_difference_jacobians(&x).unwrap();
            prop_assert!(an.relative_deviation(&fd) <= 1e-6);
        }
    }

    #[test]
    fn primal_dual_equilibrium_is_the_kkt_point(
        diag in prop::collection::vec(0.5..5.0, 3),
        q in prop::collection::vec(-2.0..2.0, 3),
        a in prop::collection::vec(-1.0..1.0, 3),
        b in -1.0..1.0,
    ) {
        prop_assume!(a.iter().map(|v| v * v).sum::<f64>() > 0.1);
        let prog = ConvexProgram::quadratic(
            DMatrix::from_diagonal(&DVector::from_vec(diag)),
            DVector::from_vec(q),
            DMatrix::from_row_slice(1, 3, &a),
            DVector::from_vec(vec![b]),
        )
        .unwrap();
        let kkt = solve_kkt_direct(&prog).unwrap();
        let (stat, feas) = kkt_residual(&prog, &kkt.x_star, &kkt.lambda_star).unwrap();
        prop_assert!(stat <= 1e-10 && feas <= 1e-10);
        let (sys, _) = build_primal_dual(&prog).unwrap();
        let z = DVector::from_iterator(4, kkt.x_star.iter().chain(kkt.lambda_star.iter()).copied());
        let f = sys.eval_vector_field(&z, &DVector::zeros(3)).unwrap();
        prop_assert!(f.amax() <= 1e-10, "{f}");
    }

    #[test]
    fn controller_storage_and_output(k1 in 0.1..10.0, k2 in 0.1..10.0, eta in -5.0..5.0, uc in -5.0..5.0) {
        let ctrl = KrasovskiiController::new(
            DMatrix::from_element(1, 1, k1),
            DMatrix::from_element(1, 1, k2),
            DVector::from_vec(vec![0.5]),
        )
        .unwrap();
        let e = DVector::from_vec(vec![eta]);
        let s = controller_storage(&ctrl, &e).unwrap();
        prop_assert!(s >= 0.0);
        prop_assert!((s - 0.5 * k2 * eta * eta).abs() <= 1e-12 * s.max(1.0));
        let y = controller_output(&ctrl, &e, &DVector::from_vec(vec![uc])).unwrap();
        prop_assert!((y[0] + (k2 * eta - uc) / k1).abs() <= 1e-12 * y[0].abs().max(1.0));
    }
}
