//! Primal-dual gradient dynamics for equality-constrained convex programs
//!
//! ```text
//! minimize F(x)  subject to  A·x = b
//! τx·ẋ = −(∇F(x) + Aᵀλ + u)
//! τλ·λ̇ = A·x − b
//! ```
//!
//! The flow is Krasovskii passive with metric `diag(τx, τλ)`; its fixed
//! points with `u = 0` are the KKT points of the program.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use smallvec::SmallVec;

use crate::dynamics::{InputAffineSystem, Label, Scratch};
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::models::ScalarField;
use crate::passivity::{self, StorageMetric};
use crate::sim::Rk4;

/// Smallest admissible objective-Hessian eigenvalue at the probe points.
pub const CONVEXITY_MARGIN: f64 = 1e-9;
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ConvexProgram {
    objective: ScalarField,
    quadratic: Option<(DMatrix<f64>, DVector<f64>)>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    tau_x: DMatrix<f64>,
    tau_lambda: DMatrix<f64>,
}

impl ConvexProgram {
    /// Strictly convex `F` with constraints `A·x = b` and unit time constants.
    pub fn new(objective: ScalarField, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let n = objective.dim();
        let m = a.nrows();
        let prog = ConvexProgram {
            objective,
            quadratic: None,
            a,
            b,
            tau_x: DMatrix::identity(n, n),
            tau_lambda: DMatrix::identity(m, m),
        };
        prog.validate()?;
        Ok(prog)
    }

    /// `F(x) = ½·xᵀ·P·x + qᵀ·x`.
    pub fn quadratic(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Result<Self> {
        let n = p.nrows();
        check_dim("P columns", n, p.ncols())?;
        check_dim("q", n, q.len())?;
        if !linalg::is_symmetric(&p, 1e-12) {
            return Err(Error::Definiteness {
                name: "P".into(),
                property: "symmetric",
            });
        }
        let (p1, q1, p2, q2, p3) = (p.clone(), q.clone(), p.clone(), q.clone(), p.clone());
        let objective = ScalarField::new(
            n,
            move |x| {
                let x = DVector::from_column_slice(x);
                0.5 * linalg::quad_form(&p1, &x) + q1.dot(&x)
            },
            move |x, out| {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = q2[i] + (0..x.len()).map(|j| p2[(i, j)] * x[j]).sum::<f64>();
                }
            },
            move |_, out| out.copy_from_slice(p3.as_slice()),
        );
        let mut prog = Self::new(objective, a, b)?;
        prog.quadratic = Some((p, q));
        Ok(prog)
    }

    pub fn with_time_constants(
        mut self,
        tau_x: DMatrix<f64>,
        tau_lambda: DMatrix<f64>,
    ) -> Result<Self> {
        self.tau_x = tau_x;
        self.tau_lambda = tau_lambda;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let (n, m) = (self.primal_dim(), self.dual_dim());
        check_dim("A columns", n, self.a.ncols())?;
        check_dim("b", m, self.b.len())?;
        check_dim("tau_x", n, self.tau_x.nrows())?;
        check_dim("tau_lambda", m, self.tau_lambda.nrows())?;
        linalg::spd_inverse("tau_x", &self.tau_x)?;
        linalg::spd_inverse("tau_lambda", &self.tau_lambda)?;
        for x in self.objective.probes(None) {
            let hess = self.objective.hessian(&x);
            let hess = (&hess + hess.transpose()) * 0.5;
            if linalg::min_eigenvalue(&hess) < CONVEXITY_MARGIN {
                return Err(Error::Definiteness {
                    name: "objective Hessian".into(),
                    property: "positive definite",
                });
            }
        }
        if m > 0 && linalg::rank(&self.a, RANK_TOL) < m {
            return Err(Error::Rank(format!(
                "constraint matrix has rank {} < {m} rows",
                linalg::rank(&self.a, RANK_TOL)
            )));
        }
        Ok(())
    }

    pub fn primal_dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn dual_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn objective(&self) -> &ScalarField {
        &self.objective
    }

    /// `(P, q)` when the objective is quadratic.
    pub fn quadratic_data(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        self.quadratic.as_ref().map(|(p, q)| (p, q))
    }

    pub fn constraints(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.a, &self.b)
    }

    pub fn time_constants(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.tau_x, &self.tau_lambda)
    }

    fn check_point(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<()> {
        check_dim("primal point", self.primal_dim(), x.len())?;
        check_dim("multipliers", self.dual_dim(), lambda.len())
    }
}

/// `L(x, λ) = F(x) + λᵀ(A·x − b)`.
pub fn lagrangian(prog: &ConvexProgram, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<f64> {
    prog.check_point(x, lambda)?;
    Ok(prog.objective.value(x.as_slice()) + lambda.dot(&(&prog.a * x - &prog.b)))
}

/// `(‖∇F(x) + Aᵀλ‖, ‖A·x − b‖)`.
pub fn kkt_residual(
    prog: &ConvexProgram,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<(f64, f64)> {
    prog.check_point(x, lambda)?;
    let stationarity = prog.objective.gradient(x.as_slice()) + prog.a.transpose() * lambda;
    Ok((stationarity.norm(), (&prog.a * x - &prog.b).norm()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktPoint {
    #[serde(serialize_with = "crate::linalg::ser_vector")]
    pub x_star: DVector<f64>,
    #[serde(serialize_with = "crate::linalg::ser_vector")]
    pub lambda_star: DVector<f64>,
    pub stationarity_norm: f64,
    pub feasibility_norm: f64,
}

/// Solves `[[P, Aᵀ], [A, 0]]·(x, λ) = (−q, b)` by LU factorization with one
/// step of iterative refinement.
pub fn solve_kkt_system(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (n, m) = (p.nrows(), a.nrows());
    check_dim("P columns", n, p.ncols())?;
    check_dim("q", n, q.len())?;
    check_dim("A columns", n, a.ncols())?;
    check_dim("b", m, b.len())?;
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(p);
    kkt.view_mut((n, 0), (m, n)).copy_from(a);
    kkt.view_mut((0, n), (n, m)).copy_from(&a.transpose());
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-q));
    rhs.rows_mut(n, m).copy_from(b);
    let rank = linalg::rank(&kkt, RANK_TOL);
    if rank < n + m {
        return Err(Error::Rank(format!(
            "KKT matrix has rank {rank} < {}",
            n + m
        )));
    }
    let lu = kkt.clone().lu();
    let mut sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Rank("KKT matrix is singular".into()))?;
    let correction = lu
        .solve(&(&rhs - &kkt * &sol))
        .ok_or_else(|| Error::Rank("KKT matrix is singular".into()))?;
    sol += correction;
    Ok((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
}

/// Direct KKT solution of a quadratic program.
pub fn solve_kkt_direct(prog: &ConvexProgram) -> Result<KktPoint> {
    let (p, q) = prog.quadratic_data().ok_or_else(|| {
        Error::NotApplicable("direct KKT solve needs a quadratic objective".into())
    })?;
    let (x, lambda) = solve_kkt_system(p, q, &prog.a, &prog.b)?;
    let (stationarity_norm, feasibility_norm) = kkt_residual(prog, &x, &lambda)?;
    Ok(KktPoint {
        x_star: x,
        lambda_star: lambda,
        stationarity_norm,
        feasibility_norm,
    })
}

fn labels(prefix: &str, count: usize) -> Vec<Label> {
    (1..=count)
        .map(|i| Label::new(format!("{prefix}{i}"), ""))
        .collect()
}

/// Primal-dual flow over `(x, λ)` with input `u` entering the primal
/// equation, and its Krasovskii metric `diag(τx, τλ)`.
pub fn build_primal_dual(prog: &ConvexProgram) -> Result<(InputAffineSystem, StorageMetric)> {
    let (n, m) = (prog.primal_dim(), prog.dual_dim());
    let tx_inv = linalg::spd_inverse("tau_x", &prog.tau_x)?;
    let tl_inv = linalg::spd_inverse("tau_lambda", &prog.tau_lambda)?;
    let tl_inv_a = &tl_inv * &prog.a;
    let tx_inv_at = &tx_inv * prog.a.transpose();

    let drift = {
        let (objective, tx_inv, tl_inv_a, tx_inv_at, tl_inv) = (
            prog.objective.clone(),
            tx_inv.clone(),
            tl_inv_a.clone(),
            tx_inv_at.clone(),
            tl_inv.clone(),
        );
        let tl_inv_b = &tl_inv * &prog.b;
        move |z: &[f64], out: &mut [f64]| {
            let (x, lambda) = z.split_at(n);
            let mut grad: Scratch = SmallVec::from_elem(0.0, n);
            objective.gradient_into(x, &mut grad);
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc -= tx_inv[(i, j)] * grad[j];
                }
                for (j, l) in lambda.iter().enumerate() {
                    acc -= tx_inv_at[(i, j)] * l;
                }
                out[i] = acc;
            }
            for r in 0..m {
                let mut acc = -tl_inv_b[r];
                for (j, xj) in x.iter().enumerate() {
                    acc += tl_inv_a[(r, j)] * xj;
                }
                out[n + r] = acc;
            }
        }
    };
    let input_map = {
        let tx_inv = tx_inv.clone();
        move |_: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            for j in 0..n {
                for i in 0..n {
                    out[j * (n + m) + i] = -tx_inv[(i, j)];
                }
            }
        }
    };
    let jac_drift = {
        let objective = prog.objective.clone();
        let (tx_inv, tl_inv_a, tx_inv_at) = (tx_inv.clone(), tl_inv_a, tx_inv_at);
        move |z: &[f64], out: &mut [f64]| {
            let mut jac = DMatrix::zeros(n + m, n + m);
            jac.view_mut((0, 0), (n, n))
                .copy_from(&(-&tx_inv * objective.hessian(&z[..n])));
            jac.view_mut((0, n), (n, m)).copy_from(&(-&tx_inv_at));
            jac.view_mut((n, 0), (m, n)).copy_from(&tl_inv_a);
            out.copy_from_slice(jac.as_slice());
        }
    };
    let mut state_labels = labels("x", n);
    state_labels.extend(labels("lambda", m));
    let sys = InputAffineSystem::builder("primal_dual", n + m, n)
        .state_labels(state_labels)
        .input_labels(labels("u", n))
        .drift(drift)
        .input_map(input_map)
        .jacobians(jac_drift, |_, out| out.fill(0.0))
        .build()?;
    let q = StorageMetric::new(linalg::block_diagonal(&[&prog.tau_x, &prog.tau_lambda]))?;
    Ok((sys, q))
}

/// `−τx⁻¹·(∂L/∂x + u)`, the primal velocity. The supply output `gᵀQf` of
/// the flow equals its negative.
pub fn primal_velocity_output(
    prog: &ConvexProgram,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    prog.check_point(x, lambda)?;
    check_dim("input", prog.primal_dim(), u.len())?;
    let tx_inv = linalg::spd_inverse("tau_x", &prog.tau_x)?;
    let dl = prog.objective.gradient(x.as_slice()) + prog.a.transpose() * lambda;
    Ok(-(tx_inv * (dl + u)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowSettings {
    pub step: f64,
    pub max_time: f64,
    /// Bound on both KKT residuals.
    pub tolerance: f64,
    /// Consecutive steps the bound must hold.
    pub consecutive: usize,
}

impl Default for FlowSettings {
    fn default() -> Self {
        FlowSettings {
            step: 1e-3,
            max_time: 1e3,
            tolerance: 1e-8,
            consecutive: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowResult {
    pub point: KktPoint,
    pub converged: bool,
    pub time: f64,
    pub steps: usize,
    pub initial_storage: f64,
    /// Largest single-step increase of the Krasovskii storage.
    pub max_storage_increase: f64,
}

/// Integrates the primal-dual flow with `u = 0` until both KKT residuals
/// stay below the tolerance for the required number of steps.
pub fn solve_flow(
    prog: &ConvexProgram,
    x0: &DVector<f64>,
    lambda0: &DVector<f64>,
    settings: FlowSettings,
) -> Result<FlowResult> {
    prog.check_point(x0, lambda0)?;
    if !(settings.step > 0.0 && settings.max_time >= settings.step) {
        return Err(Error::InvalidParameter {
            name: "flow settings".into(),
            reason: "step must be positive and below max_time".into(),
        });
    }
    let (n, m) = (prog.primal_dim(), prog.dual_dim());
    let (sys, q) = build_primal_dual(prog)?;
    let u = vec![0.0; n];
    let mut z: Vec<f64> = x0.iter().chain(lambda0.iter()).copied().collect();
    let mut h = vec![0.0; n];
    let storage =
        |z: &[f64], h: &mut [f64]| passivity::storage_and_supply_into(&sys, q.matrix(), z, &u, h);
    let initial_storage = storage(&z, &mut h)?;
    let mut previous = initial_storage;
    let mut max_storage_increase = f64::NEG_INFINITY;
    let mut rk = Rk4::new(n + m);
    let max_steps = (settings.max_time / settings.step).ceil() as usize;
    let mut streak = 0;
    let mut steps = 0;
    let residual = |z: &[f64]| {
        kkt_residual(
            prog,
            &DVector::from_column_slice(&z[..n]),
            &DVector::from_column_slice(&z[n..]),
        )
    };
    while steps < max_steps && streak < settings.consecutive {
        rk.step(&mut z, settings.step, |zz, dz| {
            sys.vector_field_into(zz, &u, dz)
        })?;
        steps += 1;
        let s = storage(&z, &mut h)?;
        max_storage_increase = max_storage_increase.max(s - previous);
        previous = s;
        let (st, fe) = residual(&z)?;
        if st <= settings.tolerance && fe <= settings.tolerance {
            streak += 1;
        } else {
            streak = 0;
        }
    }
    let (stationarity_norm, feasibility_norm) = residual(&z)?;
    Ok(FlowResult {
        point: KktPoint {
            x_star: DVector::from_column_slice(&z[..n]),
            lambda_star: DVector::from_column_slice(&z[n..]),
            stationarity_norm,
            feasibility_norm,
        },
        converged: streak >= settings.consecutive,
        time: steps as f64 * settings.step,
        steps,
        initial_storage,
        max_storage_increase,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::passivity::{check_prop1, CheckTolerances, RegionSampler};

    fn half_norm(n: usize) -> ScalarField {
        ScalarField::quadratic(DMatrix::identity(n, n))
    }

    fn simple_qp() -> ConvexProgram {
        ConvexProgram::quadratic(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_vec(vec![1.0]),
        )
        .unwrap()
    }

    #[test]
    fn lagrangian_examples() {
        let prog = simple_qp();
        let x = DVector::from_vec(vec![0.0, 0.0]);
        assert_eq!(
            lagrangian(&prog, &x, &DVector::from_vec(vec![3.0])).unwrap(),
            -3.0
        );
        let xf = DVector::from_vec(vec![0.3, 0.7]);
        let f = prog.objective().value(xf.as_slice());
        assert_eq!(
            lagrangian(&prog, &xf, &DVector::from_vec(vec![5.0])).unwrap(),
            f
        );
        assert_eq!(lagrangian(&prog, &x, &DVector::zeros(1)).unwrap(), 0.0);
        assert!(lagrangian(&prog, &DVector::zeros(3), &DVector::zeros(1)).is_err());
    }

    #[test]
    fn kkt_residual_examples() {
        let prog = simple_qp();
        let (s, f) = kkt_residual(
            &prog,
            &DVector::from_vec(vec![0.5, 0.5]),
            &DVector::from_vec(vec![-0.5]),
        )
        .unwrap();
        assert_eq!((s, f), (0.0, 0.0));
        // unit row A = [1 0]: a shift δ along x1 is a feasibility error of |δ|
        let prog = ConvexProgram::new(
            half_norm(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_vec(vec![2.0]),
        )
        .unwrap();
        let (_, f) = kkt_residual(
            &prog,
            &DVector::from_vec(vec![2.0 - 0.25, 1.0]),
            &DVector::zeros(1),
        )
        .unwrap();
        assert_eq!(f, 0.25);
        let unconstrained =
            ConvexProgram::new(half_norm(2), DMatrix::zeros(0, 2), DVector::zeros(0)).unwrap();
        let (s, _) = kkt_residual(&unconstrained, &DVector::zeros(2), &DVector::zeros(0)).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn direct_solve_examples() {
        let kkt = solve_kkt_direct(&simple_qp()).unwrap();
        assert!((kkt.x_star - DVector::from_vec(vec![0.5, 0.5])).norm() < 1e-14);
        assert!((kkt.lambda_star[0] + 0.5).abs() < 1e-14);
        assert!(kkt.stationarity_norm <= 1e-10 && kkt.feasibility_norm <= 1e-10);

        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let q = DVector::from_vec(vec![1.0, -1.0]);
        let prog = ConvexProgram::quadratic(
            p.clone(),
            q.clone(),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap();
        let kkt = solve_kkt_direct(&prog).unwrap();
        let expected = -p.try_inverse().unwrap() * q;
        assert!((kkt.x_star - expected).norm() < 1e-14);
    }

    #[test]
    fn rank_deficient_constraints_rejected() {
        let err = ConvexProgram::new(
            half_norm(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
            DVector::from_vec(vec![1.0, 2.0]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Rank(_)));
        let err = solve_kkt_system(
            &DMatrix::identity(2, 2),
            &DVector::zeros(2),
            &DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
            &DVector::from_vec(vec![1.0, 2.0]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Rank(_)));
    }

    #[test]
    fn non_convex_objective_rejected() {
        let err = ConvexProgram::new(
            ScalarField::quadratic(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Definiteness { .. }));
    }

    #[test]
    fn unit_flow_without_constraints_is_plain_descent() {
        let prog =
            ConvexProgram::new(half_norm(2), DMatrix::zeros(0, 2), DVector::zeros(0)).unwrap();
        let (sys, _) = build_primal_dual(&prog).unwrap();
        let x = DVector::from_vec(vec![0.7, -1.2]);
        let u = DVector::from_vec(vec![0.1, 0.4]);
        assert_eq!(sys.eval_vector_field(&x, &u).unwrap(), -(&x + &u));
    }

    #[test]
    fn kkt_point_is_a_fixed_point() {
        let prog = simple_qp();
        let (sys, _) = build_primal_dual(&prog).unwrap();
        let kkt = solve_kkt_direct(&prog).unwrap();
        let z = DVector::from_vec(vec![kkt.x_star[0], kkt.x_star[1], kkt.lambda_star[0]]);
        assert!(
            sys.eval_vector_field(&z, &DVector::zeros(2))
                .unwrap()
                .norm()
                < 1e-14
        );
    }

    #[test]
    fn flow_is_krasovskii_passive() {
        let prog = simple_qp()
            .with_time_constants(
                DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
                DMatrix::from_element(1, 1, 0.5),
            )
            .unwrap();
        let (sys, q) = build_primal_dual(&prog).unwrap();
        let sampler =
            RegionSampler::new(vec![(-3.0, 3.0); 3], vec![(-1.0, 1.0); 2], 200, 4).unwrap();
        let cert = check_prop1(&sys, &q, &sampler, CheckTolerances::default()).unwrap();
        assert!(cert.pass, "{cert:?}");
        // Q_g0 = diag(−2∇²F, 0): largest eigenvalue is exactly the zero block
        assert!(cert.worst_margin.abs() < 1e-12);
    }

    #[test]
    fn supply_output_is_the_negated_primal_velocity() {
        let prog = simple_qp();
        let (sys, q) = build_primal_dual(&prog).unwrap();
        let x = DVector::from_vec(vec![0.2, -0.4]);
        let l = DVector::from_vec(vec![1.5]);
        let u = DVector::from_vec(vec![0.3, 0.1]);
        let z = DVector::from_vec(vec![0.2, -0.4, 1.5]);
        let h = passivity::supply_output(&sys, &q, &z, &u).unwrap();
        let v = primal_velocity_output(&prog, &x, &l, &u).unwrap();
        assert!((h + v).norm() < 1e-14);
    }

    #[test]
    fn flow_converges_to_direct_solution() {
        let prog = simple_qp();
        let res = solve_flow(
            &prog,
            &DVector::from_vec(vec![3.0, -2.0]),
            &DVector::zeros(1),
            FlowSettings::default(),
        )
        .unwrap();
        assert!(res.converged);
        let kkt = solve_kkt_direct(&prog).unwrap();
        assert!((res.point.x_star - kkt.x_star).norm() < 1e-6);
        assert!((res.point.lambda_star - kkt.lambda_star).norm() < 1e-6);
        assert!(res.max_storage_increase <= 1e-12 * res.initial_storage);
    }
}
