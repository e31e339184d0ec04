//! Krasovskii-passivity-based control and interconnection.
//!
//! The controller `K1·η̇ = −K2·η + u_c`, `y_c = η̇` is wired to the
//! extended plant with `η = u − u*`, `u_c = −h_K + ν` and `u_d = y_c`, so
//! that
//!
//! ```text
//! u_d = K1⁻¹·(K2·(u* − u) − h_K + ν)
//! ```
//!
//! With `S_d = S_K + ½ηᵀK2η` this gives
//! `Ṡ_d = ½fᵀQ_f f − u_dᵀK1u_d + u_dᵀν ≤ u_dᵀν`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use smallvec::SmallVec;

use crate::dynamics::{
    Equilibrium, ExtendedSystem, InputAffineSystem, Label, Scratch, EQUILIBRIUM_TOL,
};
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::passivity::{
    self, check_prop1, dissipation_series, CheckTolerances, PassivityCertificate, RegionSampler,
    StorageMetric,
};
use crate::sim::{DissipationReport, Layout, SimModel, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct KrasovskiiController {
    k1: DMatrix<f64>,
    k2: DMatrix<f64>,
    k1_inv: DMatrix<f64>,
    k1_inv_k2: DMatrix<f64>,
    u_star: DVector<f64>,
}

impl KrasovskiiController {
    pub fn new(k1: DMatrix<f64>, k2: DMatrix<f64>, u_star: DVector<f64>) -> Result<Self> {
        let p = u_star.len();
        check_dim("K1", p, k1.nrows())?;
        check_dim("K2", p, k2.nrows())?;
        let k1_inv = linalg::spd_inverse("K1", &k1)?;
        linalg::spd_inverse("K2", &k2)?;
        let k1_inv_k2 = &k1_inv * &k2;
        Ok(KrasovskiiController {
            k1,
            k2,
            k1_inv,
            k1_inv_k2,
            u_star,
        })
    }

    /// `K1 = K2 = I`.
    pub fn unit_gains(u_star: DVector<f64>) -> Self {
        let p = u_star.len();
        Self::new(DMatrix::identity(p, p), DMatrix::identity(p, p), u_star)
            .expect("identity gains are valid")
    }

    pub fn k1(&self) -> &DMatrix<f64> {
        &self.k1
    }

    pub fn k2(&self) -> &DMatrix<f64> {
        &self.k2
    }

    pub fn u_star(&self) -> &DVector<f64> {
        &self.u_star
    }

    pub fn dim(&self) -> usize {
        self.u_star.len()
    }
}

/// `y_c = η̇ = −K1⁻¹·(K2·η − u_c)`.
pub fn controller_output(
    ctrl: &KrasovskiiController,
    eta: &DVector<f64>,
    u_c: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim("controller state", ctrl.dim(), eta.len())?;
    check_dim("controller input", ctrl.dim(), u_c.len())?;
    Ok(-(&ctrl.k1_inv * (&ctrl.k2 * eta - u_c)))
}

/// `S_c = ½·ηᵀ·K2·η`.
pub fn controller_storage(ctrl: &KrasovskiiController, eta: &DVector<f64>) -> Result<f64> {
    check_dim("controller state", ctrl.dim(), eta.len())?;
    Ok(0.5 * linalg::quad_form(&ctrl.k2, eta))
}

/// Extended plant in feedback with a [`KrasovskiiController`]; state
/// `(x, u)`, external input `ν`.
#[derive(Debug, Clone)]
pub struct ClosedLoopSystem {
    plant: InputAffineSystem,
    q: StorageMetric,
    ctrl: KrasovskiiController,
    equilibrium: Equilibrium,
}

/// Wires `ctrl` to the extended plant around `(x*, u*)`.
pub fn close_loop(
    ext: &ExtendedSystem,
    q: &StorageMetric,
    ctrl: &KrasovskiiController,
    equilibrium: &Equilibrium,
) -> Result<ClosedLoopSystem> {
    let plant = ext.base();
    check_dim("storage metric", plant.state_dim(), q.dim())?;
    check_dim("controller", plant.input_dim(), ctrl.dim())?;
    check_dim(
        "equilibrium state",
        plant.state_dim(),
        equilibrium.x_star.len(),
    )?;
    if !q.is_positive_definite() {
        return Err(Error::Definiteness {
            name: "Q".into(),
            property: "positive definite",
        });
    }
    if ctrl.u_star != equilibrium.u_star {
        return Err(Error::InvalidParameter {
            name: "u_star".into(),
            reason: "controller setpoint differs from the equilibrium input".into(),
        });
    }
    let eq = Equilibrium::at(
        plant,
        equilibrium.x_star.clone(),
        equilibrium.u_star.clone(),
    )?;
    if eq.residual_norm > EQUILIBRIUM_TOL {
        return Err(Error::InvalidParameter {
            name: "equilibrium".into(),
            reason: format!(
                "residual {:e} exceeds {EQUILIBRIUM_TOL:e}",
                eq.residual_norm
            ),
        });
    }
    Ok(ClosedLoopSystem {
        plant: plant.clone(),
        q: q.clone(),
        ctrl: ctrl.clone(),
        equilibrium: eq,
    })
}

impl ClosedLoopSystem {
    pub fn plant(&self) -> &InputAffineSystem {
        &self.plant
    }

    pub fn metric(&self) -> &StorageMetric {
        &self.q
    }

    pub fn controller(&self) -> &KrasovskiiController {
        &self.ctrl
    }

    pub fn equilibrium(&self) -> &Equilibrium {
        &self.equilibrium
    }

    pub fn state_dim(&self) -> usize {
        self.plant.state_dim() + self.plant.input_dim()
    }

    /// Writes `f(x,u)` into `f`, `u_d` into `ud` and returns `S_K`.
    fn evaluate(&self, z: &[f64], nu: &[f64], f: &mut [f64], ud: &mut [f64]) -> Result<f64> {
        let (n, m) = (self.plant.state_dim(), self.plant.input_dim());
        check_dim("closed-loop state", n + m, z.len())?;
        check_dim("external input", m, nu.len())?;
        let (x, u) = z.split_at(n);
        let mut h: Scratch = SmallVec::from_elem(0.0, m);
        let s = passivity::storage_and_supply_into(&self.plant, self.q.matrix(), x, u, &mut h)?;
        self.plant.vector_field_into(x, u, f)?;
        // c = K2(u* − u) − h_K + ν, u_d = K1⁻¹c
        let mut c: Scratch = SmallVec::from_elem(0.0, m);
        for (i, ci) in c.iter_mut().enumerate() {
            *ci = nu[i] - h[i]
                + u.iter()
                    .enumerate()
                    .map(|(j, uj)| self.ctrl.k2[(i, j)] * (self.ctrl.u_star[j] - uj))
                    .sum::<f64>();
        }
        for (i, udi) in ud.iter_mut().enumerate() {
            *udi = c
                .iter()
                .enumerate()
                .map(|(j, cj)| self.ctrl.k1_inv[(i, j)] * cj)
                .sum();
        }
        Ok(s)
    }

    pub fn vector_field_into(&self, z: &[f64], nu: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.plant.state_dim();
        let (f, ud) = out.split_at_mut(n);
        self.evaluate(z, nu, f, ud).map(|_| ())
    }

    pub fn vector_field(&self, z: &DVector<f64>, nu: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.state_dim());
        self.vector_field_into(z.as_slice(), nu.as_slice(), out.as_mut_slice())?;
        Ok(out)
    }

    /// The control law `u_d(x, u, ν)`.
    pub fn input_rate(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        nu: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let z: Vec<f64> = x.iter().chain(u.iter()).copied().collect();
        let mut f = vec![0.0; self.plant.state_dim()];
        let mut ud = DVector::zeros(self.plant.input_dim());
        self.evaluate(&z, nu.as_slice(), &mut f, ud.as_mut_slice())?;
        Ok(ud)
    }

    /// The closed loop as an input-affine system over `(x, u)` with input
    /// `ν`, e.g. for locating fixed points under constant `ν ≠ 0`.
    pub fn as_input_affine(&self) -> Result<InputAffineSystem> {
        let (n, m) = (self.plant.state_dim(), self.plant.input_dim());
        let this = Arc::new(self.clone());
        let k1_inv = self.ctrl.k1_inv.clone();
        let mut labels = self.plant.state_labels().to_vec();
        labels.extend(self.plant.input_labels().iter().cloned());
        let nu_labels = self
            .plant
            .input_labels()
            .iter()
            .map(|l| Label::new(format!("nu_{}", l.name), l.unit.clone()))
            .collect();
        let domain_sys = self.plant.clone();
        InputAffineSystem::builder(format!("{}_closed_loop", self.plant.name()), n + m, m)
            .state_labels(labels)
            .input_labels(nu_labels)
            .domain(move |z| domain_sys.check_domain(&z[..n]).map_err(|e| e.to_string()))
            .drift(move |z, out| {
                let zero: Scratch = SmallVec::from_elem(0.0, m);
                if this.vector_field_into(z, &zero, out).is_err() {
                    out.fill(f64::NAN);
                }
            })
            .input_map(move |_, out| {
                out.fill(0.0);
                for j in 0..m {
                    for i in 0..m {
                        out[j * (n + m) + n + i] = k1_inv[(i, j)];
                    }
                }
            })
            .build()
    }

    /// `S_d = S_K(x,u) + ½(u* − u)ᵀK2(u* − u)`.
    pub fn closed_loop_storage(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        let s_k = passivity::storage(&self.plant, &self.q, x, u)?;
        let eta = &self.ctrl.u_star - u;
        Ok(s_k + controller_storage(&self.ctrl, &eta)?)
    }

    fn storage_slices(&self, x: &[f64], u: &[f64], h: &mut [f64]) -> Result<f64> {
        let s_k = passivity::storage_and_supply_into(&self.plant, self.q.matrix(), x, u, h)?;
        let m = u.len();
        let mut s_c = 0.0;
        for i in 0..m {
            for j in 0..m {
                s_c += (self.ctrl.u_star[i] - u[i])
                    * self.ctrl.k2[(i, j)]
                    * (self.ctrl.u_star[j] - u[j]);
            }
        }
        Ok(s_k + 0.5 * s_c)
    }

    /// `(fᵀ·Q_g0·f, K2(u* − u) − gᵀQf)`; both vanish on the invariant set.
    pub fn invariant_set_residual(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(f64, DVector<f64>)> {
        let f = self.plant.eval_vector_field(x, u)?;
        let (q_g0, _) = passivity::krasovskii_matrices(&self.plant, &self.q, x)?;
        let h = passivity::supply_output(&self.plant, &self.q, x, u)?;
        let vec = &self.ctrl.k2 * (&self.ctrl.u_star - u) - h;
        Ok((linalg::quad_form(&q_g0, &f), vec))
    }

    /// Adds `S_d` and invariant-set residual channels to a closed-loop
    /// trajectory, plus the plant's `S_K` and `h_K` channels.
    pub fn annotate(&self, traj: &mut Trajectory) -> Result<()> {
        traj.attach_krasovskii(&self.plant, &self.q)?;
        let m = self.plant.input_dim();
        let mut s_d = Vec::with_capacity(traj.len());
        let mut inv_scalar = Vec::with_capacity(traj.len());
        let mut inv_vec = vec![Vec::with_capacity(traj.len()); m];
        let mut h = vec![0.0; m];
        for k in 0..traj.len() {
            s_d.push(self.storage_slices(traj.state(k), traj.input(k), &mut h)?);
            let x = DVector::from_column_slice(traj.state(k));
            let u = DVector::from_column_slice(traj.input(k));
            let (a, b) = self.invariant_set_residual(&x, &u)?;
            inv_scalar.push(a);
            for (col, v) in inv_vec.iter_mut().zip(b.iter()) {
                col.push(*v);
            }
        }
        traj.add_channel("S_d", s_d)?;
        traj.add_channel("inv_fQf", inv_scalar)?;
        let names: Vec<String> = self
            .plant
            .input_labels()
            .iter()
            .map(|l| format!("inv_res_{}", l.name))
            .collect();
        for (name, col) in names.into_iter().zip(inv_vec) {
            traj.add_channel(name, col)?;
        }
        Ok(())
    }

    /// Checks `u_dᵀν − Ṡ_d ≥ −tol·max S_d` along a closed-loop trajectory.
    pub fn verify_dissipation(
        &self,
        traj: &Trajectory,
        relative_tolerance: f64,
    ) -> Result<DissipationReport> {
        if !traj.has_rates() {
            return Err(Error::MissingChannel("input rate u_d".into()));
        }
        let m = self.plant.input_dim();
        let mut h = vec![0.0; m];
        let mut storage = Vec::with_capacity(traj.len());
        let mut supply = Vec::with_capacity(traj.len());
        for k in 0..traj.len() {
            storage.push(self.storage_slices(traj.state(k), traj.input(k), &mut h)?);
            let nu = traj
                .signal(k)
                .ok_or_else(|| Error::MissingChannel("external input nu".into()))?;
            supply.push(traj.rate(k).iter().zip(nu).map(|(a, b)| a * b).sum());
        }
        let series = dissipation_series(traj.times(), &storage, &supply, traj.discontinuities());
        Ok(DissipationReport::from_series(
            &series,
            traj.times(),
            relative_tolerance,
        ))
    }

    /// Largest increase `S_d(t_{k+1}) − S_d(t_k)` relative to `max S_d`.
    pub fn max_relative_storage_increase(&self, traj: &Trajectory) -> Result<f64> {
        let mut h = vec![0.0; self.plant.input_dim()];
        let mut s = Vec::with_capacity(traj.len());
        for k in 0..traj.len() {
            s.push(self.storage_slices(traj.state(k), traj.input(k), &mut h)?);
        }
        let scale = s.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        let rise = s
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(if scale > 0.0 {
            rise / scale
        } else {
            rise.max(0.0)
        })
    }
}

impl SimModel for ClosedLoopSystem {
    fn layout(&self) -> Layout {
        Layout {
            name: format!("{}_closed_loop", self.plant.name()),
            dim: self.state_dim(),
            signal_dim: self.plant.input_dim(),
            state_labels: self.plant.state_labels().to_vec(),
            input_labels: self.plant.input_labels().to_vec(),
            has_rates: true,
            signal_labels: Some(("nu".into(), self.plant.input_labels().to_vec())),
        }
    }

    fn rhs(&self, z: &[f64], w: &[f64], dz: &mut [f64]) -> Result<()> {
        self.vector_field_into(z, w, dz)
    }

    fn observe(
        &self,
        z: &[f64],
        w: &[f64],
        x: &mut [f64],
        u: &mut [f64],
        rate: &mut [f64],
    ) -> Result<()> {
        let n = x.len();
        x.copy_from_slice(&z[..n]);
        u.copy_from_slice(&z[n..]);
        let mut f: Scratch = SmallVec::from_elem(0.0, n);
        self.evaluate(z, w, &mut f, rate).map(|_| ())
    }
}

/// A system together with a metric under which it is certified
/// Krasovskii passive.
#[derive(Debug, Clone)]
pub struct CertifiedSystem {
    pub system: InputAffineSystem,
    pub metric: StorageMetric,
    pub certificate: PassivityCertificate,
}

impl CertifiedSystem {
    /// Runs the sampled certificate and rejects a failing one.
    pub fn certify(
        system: InputAffineSystem,
        metric: StorageMetric,
        sampler: &RegionSampler,
        tols: CheckTolerances,
    ) -> Result<Self> {
        let certificate = check_prop1(&system, &metric, sampler, tols)?;
        if !certificate.pass {
            return Err(Error::NotCertified(format!(
                "`{}`: worst margin {:e}, worst input margin {:e}",
                system.name(),
                certificate.worst_margin,
                certificate.worst_input_margin
            )));
        }
        Ok(CertifiedSystem {
            system,
            metric,
            certificate,
        })
    }
}

/// Two extended systems coupled by `u_d1 = −h_K2 + e_d1`,
/// `u_d2 = h_K1 + e_d2`; state `(x1, u1, x2, u2)`, input `(e_d1, e_d2)`.
#[derive(Debug, Clone)]
pub struct Interconnection {
    first: CertifiedSystem,
    second: CertifiedSystem,
}

pub fn interconnect(first: &CertifiedSystem, second: &CertifiedSystem) -> Result<Interconnection> {
    check_dim(
        "input dimension of the second system",
        first.system.input_dim(),
        second.system.input_dim(),
    )?;
    check_dim("first metric", first.system.state_dim(), first.metric.dim())?;
    check_dim(
        "second metric",
        second.system.state_dim(),
        second.metric.dim(),
    )?;
    Ok(Interconnection {
        first: first.clone(),
        second: second.clone(),
    })
}

/// Per-subsystem values at one joint state.
struct Parts {
    s1: f64,
    s2: f64,
}

impl Interconnection {
    fn dims(&self) -> (usize, usize, usize) {
        (
            self.first.system.state_dim(),
            self.second.system.state_dim(),
            self.first.system.input_dim(),
        )
    }

    pub fn state_dim(&self) -> usize {
        let (n1, n2, m) = self.dims();
        n1 + n2 + 2 * m
    }

    pub fn input_dim(&self) -> usize {
        2 * self.dims().2
    }

    /// Block-diagonal metric: the joint storage is
    /// `½(f1, f2)ᵀ·diag(Q1, Q2)·(f1, f2)`.
    pub fn joint_metric(&self) -> StorageMetric {
        StorageMetric::block_diagonal(&[&self.first.metric, &self.second.metric])
    }

    /// Writes `(f1, u_d1, f2, u_d2)` into `out` when given, `(h1, h2)` into
    /// `h`, and returns the storages.
    fn evaluate(
        &self,
        z: &[f64],
        ed: &[f64],
        h: &mut [f64],
        out: Option<&mut [f64]>,
    ) -> Result<Parts> {
        let (n1, n2, m) = self.dims();
        check_dim("joint state", n1 + n2 + 2 * m, z.len())?;
        check_dim("coupling input", 2 * m, ed.len())?;
        let (x1, rest) = z.split_at(n1);
        let (u1, rest) = rest.split_at(m);
        let (x2, u2) = rest.split_at(n2);
        let (h1, h2) = h.split_at_mut(m);
        let s1 = passivity::storage_and_supply_into(
            &self.first.system,
            self.first.metric.matrix(),
            x1,
            u1,
            h1,
        )?;
        let s2 = passivity::storage_and_supply_into(
            &self.second.system,
            self.second.metric.matrix(),
            x2,
            u2,
            h2,
        )?;
        if let Some(out) = out {
            let (f1, rest) = out.split_at_mut(n1);
            let (ud1, rest) = rest.split_at_mut(m);
            let (f2, ud2) = rest.split_at_mut(n2);
            self.first.system.vector_field_into(x1, u1, f1)?;
            self.second.system.vector_field_into(x2, u2, f2)?;
            for i in 0..m {
                ud1[i] = -h2[i] + ed[i];
                ud2[i] = h1[i] + ed[m + i];
            }
        }
        Ok(Parts { s1, s2 })
    }

    pub fn vector_field_into(&self, z: &[f64], ed: &[f64], out: &mut [f64]) -> Result<()> {
        let mut h: Scratch = SmallVec::from_elem(0.0, self.input_dim());
        self.evaluate(z, ed, &mut h, Some(out)).map(|_| ())
    }

    /// `S_K1 + S_K2` at a joint state.
    pub fn joint_storage(&self, z: &[f64]) -> Result<f64> {
        let mut h: Scratch = SmallVec::from_elem(0.0, self.input_dim());
        let ed: Scratch = SmallVec::from_elem(0.0, self.input_dim());
        let p = self.evaluate(z, &ed, &mut h, None)?;
        Ok(p.s1 + p.s2)
    }

    /// The joint extended system as an input-affine system with input
    /// `(e_d1, e_d2)`.
    pub fn as_input_affine(&self) -> Result<InputAffineSystem> {
        let dim = self.state_dim();
        let m = self.dims().2;
        let (n1, n2) = (self.dims().0, self.dims().1);
        let this = Arc::new(self.clone());
        let layout = SimModel::layout(self);
        let mut labels = Vec::with_capacity(dim);
        labels.extend(layout.state_labels[..n1].iter().cloned());
        labels.extend(layout.input_labels[..m].iter().cloned());
        labels.extend(layout.state_labels[n1..].iter().cloned());
        labels.extend(layout.input_labels[m..].iter().cloned());
        InputAffineSystem::builder("interconnection", dim, 2 * m)
            .state_labels(labels)
            .input_labels(layout.signal_labels.map(|s| s.1).unwrap_or_default())
            .drift(move |z, out| {
                let zero: Scratch = SmallVec::from_elem(0.0, 2 * m);
                if this.vector_field_into(z, &zero, out).is_err() {
                    out.fill(f64::NAN);
                }
            })
            .input_map(move |_, out| {
                out.fill(0.0);
                for i in 0..m {
                    out[i * dim + n1 + i] = 1.0;
                    out[(m + i) * dim + n1 + m + n2 + i] = 1.0;
                }
            })
            .build()
    }

    /// Adds `S_K1`, `S_K2` and joint `S_K` channels.
    pub fn annotate(&self, traj: &mut Trajectory) -> Result<()> {
        let mut s1 = Vec::with_capacity(traj.len());
        let mut s2 = Vec::with_capacity(traj.len());
        let mut h: Scratch = SmallVec::from_elem(0.0, self.input_dim());
        let ed: Scratch = SmallVec::from_elem(0.0, self.input_dim());
        for k in 0..traj.len() {
            let z = self.joint_from_record(traj, k);
            let p = self.evaluate(&z, &ed, &mut h, None)?;
            s1.push(p.s1);
            s2.push(p.s2);
        }
        let total = s1.iter().zip(&s2).map(|(a, b)| a + b).collect();
        traj.add_channel("S_K1", s1)?;
        traj.add_channel("S_K2", s2)?;
        traj.add_channel("S_K", total)
    }

    fn joint_from_record(&self, traj: &Trajectory, k: usize) -> Vec<f64> {
        let (n1, _, m) = self.dims();
        let (x, u) = (traj.state(k), traj.input(k));
        let mut z = Vec::with_capacity(self.state_dim());
        z.extend_from_slice(&x[..n1]);
        z.extend_from_slice(&u[..m]);
        z.extend_from_slice(&x[n1..]);
        z.extend_from_slice(&u[m..]);
        z
    }

    /// Checks `e_d1ᵀh_K1 + e_d2ᵀh_K2 − d(S_K1 + S_K2)/dt ≥ −tol·max(S_K1 + S_K2)`.
    pub fn verify_dissipation(
        &self,
        traj: &Trajectory,
        relative_tolerance: f64,
    ) -> Result<DissipationReport> {
        let mut h: Scratch = SmallVec::from_elem(0.0, self.input_dim());
        let mut storage = Vec::with_capacity(traj.len());
        let mut supply = Vec::with_capacity(traj.len());
        for k in 0..traj.len() {
            let ed = traj
                .signal(k)
                .ok_or_else(|| Error::MissingChannel("coupling input e_d".into()))?;
            let z = self.joint_from_record(traj, k);
            let p = self.evaluate(&z, ed, &mut h, None)?;
            storage.push(p.s1 + p.s2);
            supply.push(ed.iter().zip(h.iter()).map(|(a, b)| a * b).sum());
        }
        let series = dissipation_series(traj.times(), &storage, &supply, traj.discontinuities());
        Ok(DissipationReport::from_series(
            &series,
            traj.times(),
            relative_tolerance,
        ))
    }
}

fn tagged(prefix: &str, labels: &[Label]) -> Vec<Label> {
    labels
        .iter()
        .map(|l| Label::new(format!("{prefix}{}", l.name), l.unit.clone()))
        .collect()
}

impl SimModel for Interconnection {
    fn layout(&self) -> Layout {
        let (a, b) = (&self.first.system, &self.second.system);
        let mut state_labels = tagged("A_", a.state_labels());
        state_labels.extend(tagged("B_", b.state_labels()));
        let mut input_labels = tagged("A_", a.input_labels());
        input_labels.extend(tagged("B_", b.input_labels()));
        Layout {
            name: format!("{}_x_{}", a.name(), b.name()),
            dim: self.state_dim(),
            signal_dim: self.input_dim(),
            state_labels,
            input_labels: input_labels.clone(),
            has_rates: true,
            signal_labels: Some(("ed".into(), input_labels)),
        }
    }

    fn rhs(&self, z: &[f64], w: &[f64], dz: &mut [f64]) -> Result<()> {
        self.vector_field_into(z, w, dz)
    }

    fn observe(
        &self,
        z: &[f64],
        w: &[f64],
        x: &mut [f64],
        u: &mut [f64],
        rate: &mut [f64],
    ) -> Result<()> {
        let (n1, n2, m) = self.dims();
        let mut dz: Scratch = SmallVec::from_elem(0.0, self.state_dim());
        self.vector_field_into(z, w, &mut dz)?;
        x[..n1].copy_from_slice(&z[..n1]);
        u[..m].copy_from_slice(&z[n1..n1 + m]);
        x[n1..].copy_from_slice(&z[n1 + m..n1 + m + n2]);
        u[m..].copy_from_slice(&z[n1 + m + n2..]);
        rate[..m].copy_from_slice(&dz[n1..n1 + m]);
        rate[m..].copy_from_slice(&dz[n1 + m + n2..]);
        Ok(())
    }
}
