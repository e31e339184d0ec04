use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{
    ControllerSpec, MetricSpec, ModelSpec, ProgramSpec, Region, Rows, RunConfig, SamplerSpec,
    SimulationSpec, SystemSpec,
};
use super::{RunArgs, EXIT_FAIL, EXIT_PASS};
use crate::control::{close_loop, interconnect, CertifiedSystem, KrasovskiiController};
use crate::dynamics::{Equilibrium, InputAffineSystem};
use crate::error::{Error, Result};
use crate::linalg;
use crate::models::{
    boost_converter, boost_equilibrium, in_set_b, parallel_rlc_zip, BoostParams, GradientForm,
    PortHamiltonianForm, RlcZipParams,
};
use crate::optim::{build_primal_dual, solve_flow, solve_kkt_direct, ConvexProgram, FlowSettings};
use crate::passivity::{
    self, auto_metric_ph, check_gradient, check_ph, check_prop1, CheckTolerances,
    PassivityCertificate, RegionSampler, StorageMetric,
};
use crate::sim::{convergence_metrics, integrate, DissipationReport};

pub struct Outcome {
    pub exit: u8,
    pub summary: Vec<String>,
}

pub fn execute(command: &str, args: &RunArgs) -> Result<Outcome> {
    let cfg = RunConfig::load(&args.config)?;
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let ctx = Context {
        cfg: &cfg,
        seed,
        seed_override: args.seed,
        out: &args.out,
    };
    match command {
        "check" => ctx.check(),
        "simulate" => ctx.simulate(),
        "control" => ctx.control(),
        "optimize" => ctx.optimize(),
        "interconnect" => ctx.interconnect(),
        other => Err(Error::Config(format!("unknown command `{other}`"))),
    }
}

enum Model {
    Boost {
        ode: InputAffineSystem,
        ph: PortHamiltonianForm,
        params: BoostParams,
    },
    Rlc {
        ode: InputAffineSystem,
        grad: GradientForm,
        params: RlcZipParams,
    },
    PrimalDual {
        ode: InputAffineSystem,
        metric: StorageMetric,
        program: ConvexProgram,
    },
    Linear {
        ode: InputAffineSystem,
    },
}

impl Model {
    fn ode(&self) -> &InputAffineSystem {
        match self {
            Model::Boost { ode, .. }
            | Model::Rlc { ode, .. }
            | Model::PrimalDual { ode, .. }
            | Model::Linear { ode } => ode,
        }
    }
}

fn matrix(name: &str, rows: &Rows) -> Result<DMatrix<f64>> {
    linalg::matrix_from_rows(rows).map_err(|e| Error::Config(format!("{name}: {e}")))
}

fn build_program(spec: &ProgramSpec) -> Result<ConvexProgram> {
    let p = matrix("P", &spec.p)?;
    let n = p.nrows();
    let a = if spec.a.is_empty() {
        DMatrix::zeros(0, n)
    } else {
        matrix("A", &spec.a)?
    };
    let prog = ConvexProgram::quadratic(
        p,
        DVector::from_vec(spec.q.clone()),
        a,
        DVector::from_vec(spec.b.clone()),
    )?;
    let m = prog.dual_dim();
    let tau_x = spec
        .tau_x
        .as_ref()
        .map(|r| matrix("tau_x", r))
        .transpose()?
        .unwrap_or_else(|| DMatrix::identity(n, n));
    let tau_lambda = spec
        .tau_lambda
        .as_ref()
        .map(|r| matrix("tau_lambda", r))
        .transpose()?
        .unwrap_or_else(|| DMatrix::identity(m, m));
    prog.with_time_constants(tau_x, tau_lambda)
}

fn build_model(spec: &ModelSpec) -> Result<Model> {
    Ok(match spec {
        ModelSpec::Boost { params } => {
            let (ode, ph) = boost_converter(params)?;
            Model::Boost {
                ode,
                ph,
                params: *params,
            }
        }
        ModelSpec::RlcZip { params } => {
            let (ode, grad) = parallel_rlc_zip(params)?;
            Model::Rlc {
                ode,
                grad,
                params: *params,
            }
        }
        ModelSpec::PrimalDual { program } => {
            let program = build_program(program)?;
            let (ode, metric) = build_primal_dual(&program)?;
            Model::PrimalDual {
                ode,
                metric,
                program,
            }
        }
        ModelSpec::CustomLinear { a, b } => Model::Linear {
            ode: InputAffineSystem::linear("custom_linear", matrix("A", a)?, matrix("B", b)?)?,
        },
    })
}

enum MetricKind {
    Explicit,
    AutoPh,
    Gradient(DMatrix<f64>),
}

struct Resolved {
    kind: MetricKind,
    q: StorageMetric,
}

impl Resolved {
    fn describe(&self) -> Value {
        let kind = match self.kind {
            MetricKind::Explicit => "explicit",
            MetricKind::AutoPh => "auto_ph",
            MetricKind::Gradient(_) => "gradient_induced",
        };
        json!({ "kind": kind, "Q": rows_of(self.q.matrix()) })
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

fn resolve_metric(model: &Model, spec: Option<&MetricSpec>) -> Result<Resolved> {
    match (spec, model) {
        (Some(MetricSpec::Explicit { q }), _) => Ok(Resolved {
            kind: MetricKind::Explicit,
            q: StorageMetric::new(matrix("Q", q)?)?,
        }),
        (Some(MetricSpec::AutoPh), Model::Boost { ph, .. }) | (None, Model::Boost { ph, .. }) => {
            Ok(Resolved {
                kind: MetricKind::AutoPh,
                q: auto_metric_ph(ph)?,
            })
        }
        (Some(MetricSpec::AutoPh), _) => Err(Error::Config(
            "metric `auto_ph` needs a model with a port-Hamiltonian form".into(),
        )),
        (Some(MetricSpec::GradientInduced { m }), Model::Rlc { grad, params, .. }) => {
            let weight = match m {
                Some(rows) => matrix("M", rows)?,
                None => params.gradient_weight(),
            };
            gradient_metric(grad, weight)
        }
        (None, Model::Rlc { grad, params, .. }) => gradient_metric(grad, params.gradient_weight()),
        (Some(MetricSpec::GradientInduced { .. }), _) => Err(Error::Config(
            "metric `gradient_induced` needs a model with a gradient form".into(),
        )),
        (None, Model::PrimalDual { metric, .. }) => Ok(Resolved {
            kind: MetricKind::Explicit,
            q: metric.clone(),
        }),
        (None, Model::Linear { .. }) => Err(Error::Config(
            "model `custom_linear` needs an explicit metric".into(),
        )),
    }
}

fn gradient_metric(grad: &GradientForm, weight: DMatrix<f64>) -> Result<Resolved> {
    if weight.nrows() != grad.state_dim() || weight.ncols() != grad.state_dim() {
        return Err(Error::Config(format!(
            "M must be {0}×{0}",
            grad.state_dim()
        )));
    }
    let d = grad.metric();
    let q = d * &weight * d;
    Ok(Resolved {
        q: StorageMetric::new((&q + q.transpose()) * 0.5)?,
        kind: MetricKind::Gradient(weight),
    })
}

struct System {
    name: String,
    model: Model,
    metric: Resolved,
    sampler: Option<SamplerSpec>,
}

fn build_system(spec: &SystemSpec) -> Result<System> {
    let model = build_model(&spec.model)?;
    let metric = resolve_metric(&model, spec.metric.as_ref())?;
    Ok(System {
        name: spec.model.kind().to_string(),
        model,
        metric,
        sampler: spec.sampler.clone(),
    })
}

struct Context<'a> {
    cfg: &'a RunConfig,
    seed: u64,
    seed_override: Option<u64>,
    out: &'a Path,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

impl Context<'_> {
    fn prepare_out(&self) -> Result<()> {
        fs::create_dir_all(self.out)?;
        Ok(())
    }

    fn tolerances(&self) -> CheckTolerances {
        self.cfg.tolerances.unwrap_or_default()
    }

    fn simulation(&self) -> Result<&SimulationSpec> {
        self.cfg
            .simulation
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a `simulation` section".into()))
    }

    fn sampler(&self, sys: &System) -> Result<RegionSampler> {
        let spec = sys
            .sampler
            .as_ref()
            .ok_or_else(|| Error::Config(format!("`{}` needs a `sampler` section", sys.name)))?;
        let seed = self.seed_override.or(spec.seed).unwrap_or(self.seed);
        let bounds = |b: &[[f64; 2]]| b.iter().map(|p| (p[0], p[1])).collect::<Vec<_>>();
        let input_bounds = if spec.input_bounds.is_empty() {
            vec![(0.0, 0.0); sys.model.ode().input_dim()]
        } else {
            bounds(&spec.input_bounds)
        };
        let sampler =
            RegionSampler::new(bounds(&spec.state_bounds), input_bounds, spec.count, seed)?;
        match (spec.region, &sys.model) {
            (None, _) => Ok(sampler),
            (Some(Region::SetB), Model::Rlc { params, .. }) => {
                let p = *params;
                Ok(sampler.with_predicate("G·V² ≥ P̄", move |x, _| in_set_b(&p, x)))
            }
            (Some(Region::SetB), _) => Err(Error::Config(
                "region `set_b` applies to `rlc_zip` only".into(),
            )),
        }
    }

    fn certify(&self, sys: &System) -> Result<PassivityCertificate> {
        let sampler = self.sampler(sys)?;
        let tols = self.tolerances();
        match (&sys.metric.kind, &sys.model) {
            (MetricKind::AutoPh, Model::Boost { ph, .. }) => {
                check_ph(ph, &sys.metric.q, &sampler, tols)
            }
            (MetricKind::Gradient(weight), Model::Rlc { grad, .. }) => {
                check_gradient(grad, weight, &sampler, tols).map(|(cert, _)| cert)
            }
            _ => check_prop1(sys.model.ode(), &sys.metric.q, &sampler, tols),
        }
    }

    fn check(&self) -> Result<Outcome> {
        let sys = build_system(&self.cfg.system())?;
        let cert = self.certify(&sys)?;
        self.prepare_out()?;
        write_json(&self.out.join("certificate.json"), &cert)?;
        write_json(
            &self.out.join("report.json"),
            &json!({
                "command": "check",
                "model": sys.name,
                "metric": sys.metric.describe(),
                "certificate": cert,
                "pass": cert.pass,
            }),
        )?;
        Ok(Outcome {
            exit: if cert.pass { EXIT_PASS } else { EXIT_FAIL },
            summary: vec![
                format!(
                    "{}: {} certificate on {} samples",
                    sys.name, cert.condition, cert.samples
                ),
                format!(
                    "worst margin {:e} (tol {:e}), worst input margin {:e} (tol {:e})",
                    cert.worst_margin, cert.tolerance, cert.worst_input_margin, cert.tolerance_zero
                ),
                verdict(cert.pass).to_string(),
            ],
        })
    }

    fn simulate(&self) -> Result<Outcome> {
        let sys = build_system(&self.cfg.system())?;
        let sim = self.simulation()?;
        let ode = sys.model.ode();
        let initial = sim.initial.clone().ok_or_else(|| {
            Error::Config("`simulation.initial` must give the stacked (x, u)".into())
        })?;
        let cfg = sim.to_config(initial, ode.input_dim(), self.seed);
        let mut traj = integrate(&ode.extend(), &cfg)?;
        traj.attach_krasovskii(ode, &sys.metric.q)?;
        let series = passivity::dissipation_residual(&traj, ode, &sys.metric.q)?;
        traj.add_channel("resid", series.residual.clone())?;
        let report =
            DissipationReport::from_series(&series, traj.times(), sim.dissipation_tolerance);
        self.prepare_out()?;
        traj.save_csv(&self.out.join("trajectory.csv"))?;
        write_json(
            &self.out.join("report.json"),
            &json!({
                "command": "simulate",
                "model": sys.name,
                "metric": sys.metric.describe(),
                "samples": traj.len(),
                "dissipation": report,
                "pass": report.pass,
            }),
        )?;
        Ok(Outcome {
            exit: if report.pass { EXIT_PASS } else { EXIT_FAIL },
            summary: vec![
                format!(
                    "{}: {} samples to t = {}",
                    sys.name,
                    traj.len(),
                    traj.times()[traj.len() - 1]
                ),
                dissipation_line(&report),
                verdict(report.pass).to_string(),
            ],
        })
    }

    fn equilibrium(&self, sys: &System, ctrl: &ControllerSpec) -> Result<Equilibrium> {
        match (&ctrl.equilibrium, ctrl.v_star, &sys.model) {
            (Some(eq), _, _) => Equilibrium::at(
                sys.model.ode(),
                DVector::from_vec(eq.x.clone()),
                DVector::from_vec(eq.u.clone()),
            ),
            (None, Some(v), Model::Boost { params, .. }) => boost_equilibrium(params, v),
            _ => Err(Error::Config(
                "controller needs `equilibrium`, or `v_star` for the boost model".into(),
            )),
        }
    }

    fn control(&self) -> Result<Outcome> {
        let sys = build_system(&self.cfg.system())?;
        let spec = self
            .cfg
            .controller
            .as_ref()
            .ok_or_else(|| Error::Config("`control` needs a `controller` section".into()))?;
        let sim = self.simulation()?;
        let ode = sys.model.ode();
        let m = ode.input_dim();
        let eq = self.equilibrium(&sys, spec)?;
        let gain = |name: &str, rows: &Option<Rows>| -> Result<DMatrix<f64>> {
            rows.as_ref()
                .map(|r| matrix(name, r))
                .transpose()
                .map(|g| g.unwrap_or_else(|| DMatrix::identity(m, m)))
        };
        let ctrl = KrasovskiiController::new(
            gain("K1", &spec.k1)?,
            gain("K2", &spec.k2)?,
            eq.u_star.clone(),
        )?;
        let cl = close_loop(&ode.extend(), &sys.metric.q, &ctrl, &eq)?;
        let target: Vec<f64> = eq.stacked().iter().copied().collect();
        let initial = match (&sim.initial, spec.perturbation) {
            (Some(z), _) => z.clone(),
            (None, Some(p)) => target.iter().map(|v| v * (1.0 + p)).collect(),
            (None, None) => target.clone(),
        };
        let cfg = sim.to_config(initial, m, self.seed);
        let mut traj = integrate(&cl, &cfg)?;
        cl.annotate(&mut traj)?;
        let report = cl.verify_dissipation(&traj, sim.dissipation_tolerance)?;
        let conv = convergence_metrics(&traj, &target, spec.band)?;
        let last = traj.len() - 1;
        let (inv_scalar, inv_vec) = cl.invariant_set_residual(
            &DVector::from_column_slice(traj.state(last)),
            &DVector::from_column_slice(traj.input(last)),
        )?;
        let rise = cl.max_relative_storage_increase(&traj)?;
        self.prepare_out()?;
        traj.save_csv(&self.out.join("trajectory.csv"))?;
        write_json(
            &self.out.join("report.json"),
            &json!({
                "command": "control",
                "model": sys.name,
                "metric": sys.metric.describe(),
                "equilibrium": eq,
                "K1": rows_of(ctrl.k1()),
                "K2": rows_of(ctrl.k2()),
                "convergence": conv,
                "band": spec.band,
                "invariant_set_residual": { "f_qg0_f": inv_scalar, "vector": inv_vec.as_slice() },
                "max_relative_storage_increase": rise,
                "dissipation": report,
                "pass": report.pass,
            }),
        )?;
        Ok(Outcome {
            exit: if report.pass { EXIT_PASS } else { EXIT_FAIL },
            summary: vec![
                format!(
                    "{}: closed loop to t = {}, final error {:e}, settling time {}",
                    sys.name,
                    traj.times()[last],
                    conv.final_error,
                    conv.settling_time
                ),
                format!(
                    "invariant-set residuals: fᵀQ_g0f = {:e}, max|K2(u*−u) − h_K| = {:e}",
                    inv_scalar,
                    inv_vec.amax()
                ),
                dissipation_line(&report),
                verdict(report.pass).to_string(),
            ],
        })
    }

    fn optimize(&self) -> Result<Outcome> {
        let sys = build_system(&self.cfg.system())?;
        let Model::PrimalDual { program, .. } = &sys.model else {
            return Err(Error::Config(
                "`optimize` needs a `primal_dual` model".into(),
            ));
        };
        let spec = self.cfg.optimize.clone().unwrap_or_default();
        let (n, m) = (program.primal_dim(), program.dual_dim());
        let x0 = DVector::from_vec(spec.x0.clone().unwrap_or_else(|| vec![0.0; n]));
        let l0 = DVector::from_vec(spec.lambda0.clone().unwrap_or_else(|| vec![0.0; m]));
        let settings = FlowSettings {
            step: spec.step,
            max_time: spec.max_time,
            tolerance: spec.tolerance,
            ..FlowSettings::default()
        };
        let direct = solve_kkt_direct(program)?;
        let flow = solve_flow(program, &x0, &l0, settings)?;
        let distance = (&flow.point.x_star - &direct.x_star)
            .norm()
            .max((&flow.point.lambda_star - &direct.lambda_star).norm());
        let pass = flow.converged && distance <= spec.match_tolerance;
        self.prepare_out()?;
        write_json(
            &self.out.join("report.json"),
            &json!({
                "command": "optimize",
                "direct": direct,
                "flow": flow,
                "distance": distance,
                "match_tolerance": spec.match_tolerance,
                "pass": pass,
            }),
        )?;
        Ok(Outcome {
            exit: if pass { EXIT_PASS } else { EXIT_FAIL },
            summary: vec![
                format!(
                    "primal_dual: n = {n}, m = {m}, flow {} after t = {}",
                    if flow.converged {
                        "converged"
                    } else {
                        "did not converge"
                    },
                    flow.time
                ),
                format!(
                    "distance to direct KKT solution {:e} (tol {:e})",
                    distance, spec.match_tolerance
                ),
                verdict(pass).to_string(),
            ],
        })
    }

    fn interconnect(&self) -> Result<Outcome> {
        let spec = self.cfg.interconnect.as_ref().ok_or_else(|| {
            Error::Config("`interconnect` needs an `interconnect.second` system".into())
        })?;
        let first = build_system(&self.cfg.system())?;
        let second = build_system(&spec.second)?;
        let (m1, m2) = (
            first.model.ode().input_dim(),
            second.model.ode().input_dim(),
        );
        if m1 != m2 {
            return Err(Error::Dimension {
                what: "input dimension of the second system",
                expected: m1,
                got: m2,
            });
        }
        let sim = self.simulation()?;
        let c1 = self.certify(&first)?;
        let c2 = self.certify(&second)?;
        self.prepare_out()?;
        write_json(
            &self.out.join("certificate.json"),
            &json!({ "first": c1, "second": c2 }),
        )?;
        if !(c1.pass && c2.pass) {
            write_json(
                &self.out.join("report.json"),
                &json!({ "command": "interconnect", "certified": false, "pass": false }),
            )?;
            return Ok(Outcome {
                exit: EXIT_FAIL,
                summary: vec![
                    format!(
                        "{}: {}, {}: {}",
                        first.name,
                        verdict(c1.pass),
                        second.name,
                        verdict(c2.pass)
                    ),
                    "FAIL (uncertified subsystem)".into(),
                ],
            });
        }
        let wrap = |s: &System, c: PassivityCertificate| CertifiedSystem {
            system: s.model.ode().clone(),
            metric: s.metric.q.clone(),
            certificate: c,
        };
        let joint = interconnect(&wrap(&first, c1), &wrap(&second, c2))?;
        let initial = sim.initial.clone().ok_or_else(|| {
            Error::Config("`simulation.initial` must give (x1, u1, x2, u2)".into())
        })?;
        let cfg = sim.to_config(initial, joint.input_dim(), self.seed);
        let mut traj = integrate(&joint, &cfg)?;
        joint.annotate(&mut traj)?;
        let report = joint.verify_dissipation(&traj, sim.dissipation_tolerance)?;
        traj.save_csv(&self.out.join("trajectory.csv"))?;
        write_json(
            &self.out.join("report.json"),
            &json!({
                "command": "interconnect",
                "first": first.name,
                "second": second.name,
                "certified": true,
                "dissipation": report,
                "pass": report.pass,
            }),
        )?;
        Ok(Outcome {
            exit: if report.pass { EXIT_PASS } else { EXIT_FAIL },
            summary: vec![
                format!("{} ⊕ {}: {} samples", first.name, second.name, traj.len()),
                dissipation_line(&report),
                verdict(report.pass).to_string(),
            ],
        })
    }
}

fn dissipation_line(report: &DissipationReport) -> String {
    format!(
        "dissipation: min residual {:e} over {} samples, tolerance {:e}, {} violations",
        report.min_residual, report.evaluated, report.tolerance, report.violations
    )
}
