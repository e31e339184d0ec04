//! Input-affine nonlinear systems `ẋ = g0(x) + Σ gi(x)·ui`, their extended
//! systems `(ẋ, u̇) = (f(x,u), u_d)`, Jacobians and forced equilibria.
//!
//! Evaluators work on slices and write into caller-provided buffers so the
//! integrator can run millions of steps without allocating. Matrices are
//! exchanged column-major, the same layout `nalgebra::DMatrix` uses.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use smallvec::SmallVec;

use crate::error::{check_dim, Error, Result};

/// Writes a vector (or a column-major matrix) computed from a state.
pub type FieldFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
/// Returns `Err(reason)` when a state lies outside the model domain.
pub type DomainFn = dyn Fn(&[f64]) -> std::result::Result<(), String> + Send + Sync;

pub(crate) type Scratch = SmallVec<[f64; 64]>;

/// Residual bound every computed equilibrium must meet.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;
const NEWTON_MAX_ITERATIONS: usize = 100;
const NEWTON_MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Label {
    pub name: String,
    pub unit: String,
}

impl Label {
    pub fn new(name: impl Into<String>, unit: impl Into<String>) -> Self {
        Label {
            name: name.into(),
            unit: unit.into(),
        }
    }

    fn indexed(prefix: &str, count: usize) -> Vec<Label> {
        (1..=count)
            .map(|i| Label::new(format!("{prefix}{i}"), ""))
            .collect()
    }
}

/// A system `ẋ = g0(x) + g(x)·u` with `x ∈ ℝⁿ`, `u ∈ ℝᵐ`.
#[derive(Clone)]
pub struct InputAffineSystem {
    name: String,
    n: usize,
    m: usize,
    state_labels: Vec<Label>,
    input_labels: Vec<Label>,
    drift: Arc<FieldFn>,
    input_map: Arc<FieldFn>,
    jac_drift: Option<Arc<FieldFn>>,
    jac_inputs: Option<Arc<FieldFn>>,
    domain: Option<Arc<DomainFn>>,
}

impl fmt::Debug for InputAffineSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InputAffineSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("analytic_jacobians", &self.has_analytic_jacobians())
            .finish()
    }
}

pub struct SystemBuilder {
    name: String,
    n: usize,
    m: usize,
    state_labels: Option<Vec<Label>>,
    input_labels: Option<Vec<Label>>,
    drift: Option<Arc<FieldFn>>,
    input_map: Option<Arc<FieldFn>>,
    jac_drift: Option<Arc<FieldFn>>,
    jac_inputs: Option<Arc<FieldFn>>,
    domain: Option<Arc<DomainFn>>,
}

impl SystemBuilder {
    /// `g0`: writes `n` values.
    pub fn drift(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.drift = Some(Arc::new(f));
        self
    }

    /// `g = [g1 … gm]`: writes the n×m matrix column-major.
    pub fn input_map(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.input_map = Some(Arc::new(f));
        self
    }

    /// Analytic Jacobians: `∂g0/∂x` (n×n column-major) and the m blocks
    /// `∂gi/∂x` stacked one after another.
    pub fn jacobians(
        mut self,
        drift: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        inputs: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.jac_drift = Some(Arc::new(drift));
        self.jac_inputs = Some(Arc::new(inputs));
        self
    }

    pub fn domain(
        mut self,
        f: impl Fn(&[f64]) -> std::result::Result<(), String> + Send + Sync + 'static,
    ) -> Self {
        self.domain = Some(Arc::new(f));
        self
    }

    pub fn state_labels(mut self, labels: Vec<Label>) -> Self {
        self.state_labels = Some(labels);
        self
    }

    pub fn input_labels(mut self, labels: Vec<Label>) -> Self {
        self.input_labels = Some(labels);
        self
    }

    pub fn build(self) -> Result<InputAffineSystem> {
        let missing = |what: &str| Error::InvalidParameter {
            name: what.to_string(),
            reason: format!("system `{}` needs a {what} evaluator", self.name),
        };
        let drift = self.drift.clone().ok_or_else(|| missing("drift"))?;
        let input_map = self.input_map.clone().ok_or_else(|| missing("input map"))?;
        let state_labels = self
            .state_labels
            .unwrap_or_else(|| Label::indexed("x", self.n));
        let input_labels = self
            .input_labels
            .unwrap_or_else(|| Label::indexed("u", self.m));
        check_dim("state labels", self.n, state_labels.len())?;
        check_dim("input labels", self.m, input_labels.len())?;
        Ok(InputAffineSystem {
            name: self.name,
            n: self.n,
            m: self.m,
            state_labels,
            input_labels,
            drift,
            input_map,
            jac_drift: self.jac_drift,
            jac_inputs: self.jac_inputs,
            domain: self.domain,
        })
    }
}

/// Jacobians of the drift and of every input column at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians {
    pub drift: DMatrix<f64>,
    pub inputs: Vec<DMatrix<f64>>,
    /// True when the values come from central differences rather than
    /// analytic evaluators.
    pub finite_difference: bool,
}

impl Jacobians {
    /// `∂f/∂x` at input `u`: `∂g0/∂x + Σ ui·∂gi/∂x`.
    pub fn state_jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        self.inputs
            .iter()
            .zip(u)
            .fold(self.drift.clone(), |acc, (ji, ui)| acc + ji * *ui)
    }

    /// Largest entrywise deviation relative to `max(1, max|entry|)` of self,
    /// over all matrices.
    pub fn relative_deviation(&self, other: &Jacobians) -> f64 {
        let rel = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            let scale = crate::linalg::max_abs(a).max(1.0);
            crate::linalg::max_abs(&(a - b)) / scale
        };
        self.inputs
            .iter()
            .zip(&other.inputs)
            .map(|(a, b)| rel(a, b))
            .fold(rel(&self.drift, &other.drift), f64::max)
    }
}

impl InputAffineSystem {
    pub fn builder(name: impl Into<String>, n: usize, m: usize) -> SystemBuilder {
        SystemBuilder {
            name: name.into(),
            n,
            m,
            state_labels: None,
            input_labels: None,
            drift: None,
            input_map: None,
            jac_drift: None,
            jac_inputs: None,
            domain: None,
        }
    }

    /// `ẋ = A·x + B·u`.
    pub fn linear(name: impl Into<String>, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        check_dim("linear system A columns", n, a.ncols())?;
        check_dim("linear system B rows", n, b.nrows())?;
        let m = b.ncols();
        let (a1, a2) = (a.clone(), a);
        let b = b.clone();
        Self::builder(name, n, m)
            .drift(move |x, out| {
                let x = DVector::from_column_slice(x);
                out.copy_from_slice((&a1 * x).as_slice());
            })
            .input_map(move |_, out| out.copy_from_slice(b.as_slice()))
            .jacobians(
                move |_, out| out.copy_from_slice(a2.as_slice()),
                |_, out| out.fill(0.0),
            )
            .build()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn state_labels(&self) -> &[Label] {
        &self.state_labels
    }

    pub fn input_labels(&self) -> &[Label] {
        &self.input_labels
    }

    pub fn has_analytic_jacobians(&self) -> bool {
        self.jac_drift.is_some() && self.jac_inputs.is_some()
    }

    pub fn check_domain(&self, x: &[f64]) -> Result<()> {
        match &self.domain {
            Some(domain) => domain(x).map_err(|reason| Error::Domain {
                system: self.name.clone(),
                state: x.to_vec(),
                reason,
            }),
            None => Ok(()),
        }
    }

    fn finite(&self, what: &str, values: &[f64]) -> Result<()> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                what: format!("{} of `{}`", what, self.name),
            })
        }
    }

    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim("state", self.n, x.len())?;
        self.check_domain(x)?;
        (self.drift)(x, out);
        self.finite("drift", out)
    }

    /// Column-major n×m input matrix.
    pub fn input_map_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim("state", self.n, x.len())?;
        self.check_domain(x)?;
        (self.input_map)(x, out);
        self.finite("input map", out)
    }

    /// `f(x,u)` into `out`; `g` receives the input matrix as a by-product.
    pub(crate) fn field_and_inputs_into(
        &self,
        x: &[f64],
        u: &[f64],
        g: &mut [f64],
        out: &mut [f64],
    ) -> Result<()> {
        check_dim("input", self.m, u.len())?;
        self.drift_into(x, out)?;
        self.input_map_into(x, g)?;
        let n = self.n;
        for (j, uj) in u.iter().enumerate() {
            for (o, gij) in out.iter_mut().zip(&g[j * n..(j + 1) * n]) {
                *o += gij * uj;
            }
        }
        Ok(())
    }

    pub fn vector_field_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        let mut g: Scratch = SmallVec::from_elem(0.0, self.n * self.m);
        self.field_and_inputs_into(x, u, &mut g, out)
    }

    /// `f(x,u) = g0(x) + Σ gi(x)·ui`.
    pub fn eval_vector_field(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.n);
        self.vector_field_into(x.as_slice(), u.as_slice(), out.as_mut_slice())?;
        Ok(out)
    }

    pub fn drift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.n);
        self.drift_into(x.as_slice(), out.as_mut_slice())?;
        Ok(out)
    }

    pub fn input_matrix(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.n, self.m);
        self.input_map_into(x.as_slice(), out.as_mut_slice())?;
        Ok(out)
    }

    /// Analytic Jacobians when available, central differences otherwise.
    pub fn eval_jacobians(&self, x: &DVector<f64>) -> Result<Jacobians> {
        match (&self.jac_drift, &self.jac_inputs) {
            (Some(jd), Some(ji)) => {
                check_dim("state", self.n, x.len())?;
                self.check_domain(x.as_slice())?;
                let n = self.n;
                let mut drift = DMatrix::zeros(n, n);
                jd(x.as_slice(), drift.as_mut_slice());
                let mut stacked = vec![0.0; n * n * self.m];
                ji(x.as_slice(), &mut stacked);
                self.finite("drift Jacobian", drift.as_slice())?;
                self.finite("input Jacobians", &stacked)?;
                let inputs = stacked
                    .chunks_exact(n * n)
                    .map(|c| DMatrix::from_column_slice(n, n, c))
                    .collect();
                Ok(Jacobians {
                    drift,
                    inputs,
                    finite_difference: false,
                })
            }
            _ => self.finite_difference_jacobians(x),
        }
    }

    /// Central differences with step `1e-6·max(1, ‖x‖)`.
    pub fn finite_difference_jacobians(&self, x: &DVector<f64>) -> Result<Jacobians> {
        check_dim("state", self.n, x.len())?;
        let (n, m) = (self.n, self.m);
        let h = 1e-6 * x.norm().max(1.0);
        let mut drift = DMatrix::zeros(n, n);
        let mut inputs = vec![DMatrix::zeros(n, n); m];
        let (mut dp, mut dm) = (vec![0.0; n], vec![0.0; n]);
        let (mut gp, mut gm) = (vec![0.0; n * m], vec![0.0; n * m]);
        let mut probe = x.as_slice().to_vec();
        for k in 0..n {
            probe[k] = x[k] + h;
            self.drift_into(&probe, &mut dp)?;
            self.input_map_into(&probe, &mut gp)?;
            probe[k] = x[k] - h;
            self.drift_into(&probe, &mut dm)?;
            self.input_map_into(&probe, &mut gm)?;
            probe[k] = x[k];
            for r in 0..n {
                drift[(r, k)] = (dp[r] - dm[r]) / (2.0 * h);
                for (i, ji) in inputs.iter_mut().enumerate() {
                    ji[(r, k)] = (gp[i * n + r] - gm[i * n + r]) / (2.0 * h);
                }
            }
        }
        Ok(Jacobians {
            drift,
            inputs,
            finite_difference: true,
        })
    }

    pub fn extend(&self) -> ExtendedSystem {
        ExtendedSystem { base: self.clone() }
    }
}

/// `(ẋ, u̇) = (f(x,u), u_d)` over `z = (x, u)` with input `u_d`.
#[derive(Debug, Clone)]
pub struct ExtendedSystem {
    base: InputAffineSystem,
}

impl ExtendedSystem {
    pub fn base(&self) -> &InputAffineSystem {
        &self.base
    }

    pub fn state_dim(&self) -> usize {
        self.base.n + self.base.m
    }

    pub fn input_dim(&self) -> usize {
        self.base.m
    }

    pub fn vector_field_into(&self, z: &[f64], ud: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim("extended state", self.state_dim(), z.len())?;
        check_dim("input rate", self.base.m, ud.len())?;
        let (x, u) = z.split_at(self.base.n);
        let (fx, fu) = out.split_at_mut(self.base.n);
        self.base.vector_field_into(x, u, fx)?;
        fu.copy_from_slice(ud);
        Ok(())
    }

    pub fn vector_field(&self, z: &DVector<f64>, ud: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.state_dim());
        self.vector_field_into(z.as_slice(), ud.as_slice(), out.as_mut_slice())?;
        Ok(out)
    }

    /// The extended system as an input-affine system in its own right
    /// (state `z`, input `u_d`).
    pub fn as_input_affine(&self) -> Result<InputAffineSystem> {
        let (n, m) = (self.base.n, self.base.m);
        let base = self.base.clone();
        let base_g = self.base.clone();
        let base_d = self.base.clone();
        let mut labels = self.base.state_labels.clone();
        labels.extend(self.base.input_labels.iter().cloned());
        let rate_labels = self
            .base
            .input_labels
            .iter()
            .map(|l| Label::new(format!("d{}", l.name), format!("{}/s", l.unit)))
            .collect();
        let builder =
            InputAffineSystem::builder(format!("{} (extended)", self.base.name), n + m, m)
                .state_labels(labels)
                .input_labels(rate_labels)
                .drift(move |z, out| {
                    let (x, u) = z.split_at(n);
                    let (fx, fu) = out.split_at_mut(n);
                    // domain failures surface as NaN and are caught by the finiteness check
                    if base.vector_field_into(x, u, fx).is_err() {
                        fx.fill(f64::NAN);
                    }
                    fu.fill(0.0);
                })
                .input_map(move |_, out| {
                    out.fill(0.0);
                    for j in 0..m {
                        out[j * (n + m) + n + j] = 1.0;
                    }
                })
                .domain(move |z| base_g.check_domain(&z[..n]).map_err(|e| e.to_string()));
        if !self.base.has_analytic_jacobians() {
            return builder.build();
        }
        builder
            .jacobians(
                move |z, out| {
                    let nz = n + m;
                    out.fill(0.0);
                    let (x, u) = z.split_at(n);
                    let xv = DVector::from_column_slice(x);
                    match (base_d.eval_jacobians(&xv), base_d.input_matrix(&xv)) {
                        (Ok(jac), Ok(g)) => {
                            let jx = jac.state_jacobian(u);
                            for c in 0..n {
                                for r in 0..n {
                                    out[c * nz + r] = jx[(r, c)];
                                }
                            }
                            for c in 0..m {
                                for r in 0..n {
                                    out[(n + c) * nz + r] = g[(r, c)];
                                }
                            }
                        }
                        _ => out.fill(f64::NAN),
                    }
                },
                |_, out| out.fill(0.0),
            )
            .build()
    }
}

/// A forced equilibrium `(x*, u*)` with `f(x*, u*) ≈ 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Equilibrium {
    #[serde(serialize_with = "crate::linalg::ser_vector")]
    pub x_star: DVector<f64>,
    #[serde(serialize_with = "crate::linalg::ser_vector")]
    pub u_star: DVector<f64>,
    pub residual_norm: f64,
}

impl Equilibrium {
    /// Evaluates the residual of `(x, u)` on `sys` and records it.
    pub fn at(sys: &InputAffineSystem, x: DVector<f64>, u: DVector<f64>) -> Result<Self> {
        let residual_norm = sys.eval_vector_field(&x, &u)?.norm();
        Ok(Equilibrium {
            x_star: x,
            u_star: u,
            residual_norm,
        })
    }

    pub fn stacked(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.x_star.len() + self.u_star.len());
        z.rows_mut(0, self.x_star.len()).copy_from(&self.x_star);
        z.rows_mut(self.x_star.len(), self.u_star.len())
            .copy_from(&self.u_star);
        z
    }
}

/// Damped Newton on `f(x,u) = 0` over the coordinates of `(x, u)` that are
/// not `frozen`. Exactly `n` coordinates must be free.
pub fn find_equilibrium(
    sys: &InputAffineSystem,
    guess_x: &DVector<f64>,
    guess_u: &DVector<f64>,
    frozen: &[bool],
) -> Result<Equilibrium> {
    let (n, m) = (sys.n, sys.m);
    check_dim("equilibrium guess state", n, guess_x.len())?;
    check_dim("equilibrium guess input", m, guess_u.len())?;
    check_dim("frozen mask", n + m, frozen.len())?;
    let free: Vec<usize> = (0..n + m).filter(|&i| !frozen[i]).collect();
    if free.len() != n {
        return Err(Error::InvalidParameter {
            name: "frozen".into(),
            reason: format!("{} free coordinates for {} equations", free.len(), n),
        });
    }
    if guess_x.iter().chain(guess_u.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "guess".into(),
            reason: "non-finite initial guess".into(),
        });
    }

    let split = |z: &DVector<f64>| (z.rows(0, n).into_owned(), z.rows(n, m).into_owned());
    let residual = |z: &DVector<f64>| -> Result<DVector<f64>> {
        let (x, u) = split(z);
        sys.eval_vector_field(&x, &u)
    };

    let mut z = DVector::zeros(n + m);
    z.rows_mut(0, n).copy_from(guess_x);
    z.rows_mut(n, m).copy_from(guess_u);
    let mut f = residual(&z)?;
    let mut norm = f.norm();

    for _ in 0..NEWTON_MAX_ITERATIONS {
        if norm <= EQUILIBRIUM_TOL {
            let (x, u) = split(&z);
            return Ok(Equilibrium {
                x_star: x,
                u_star: u,
                residual_norm: norm,
            });
        }
        let (x, u) = split(&z);
        let jac = sys.eval_jacobians(&x)?;
        let jx = jac.state_jacobian(u.as_slice());
        let g = sys.input_matrix(&x)?;
        let jz = DMatrix::from_fn(n, n, |r, c| {
            let k = free[c];
            if k < n {
                jx[(r, k)]
            } else {
                g[(r, k - n)]
            }
        });
        let sv = jz.clone().svd(false, false).singular_values;
        if n > 0 && sv.min() <= 1e-13 * sv.max().max(f64::MIN_POSITIVE) {
            return Err(Error::Singular(format!(
                "equilibrium Jacobian of `{}` at {:?}",
                sys.name,
                z.as_slice()
            )));
        }
        let step = jz
            .lu()
            .solve(&(-&f))
            .ok_or_else(|| Error::Singular(format!("equilibrium Jacobian of `{}`", sys.name)))?;

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=NEWTON_MAX_HALVINGS {
            let mut trial = z.clone();
            for (c, &k) in free.iter().enumerate() {
                trial[k] += scale * step[c];
            }
            if let Ok(ft) = residual(&trial) {
                let nt = ft.norm();
                if nt < norm {
                    z = trial;
                    f = ft;
                    norm = nt;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                iterations: NEWTON_MAX_ITERATIONS,
                residual: norm,
            });
        }
    }
    if norm <= EQUILIBRIUM_TOL {
        let (x, u) = split(&z);
        return Ok(Equilibrium {
            x_star: x,
            u_star: u,
            residual_norm: norm,
        });
    }
    Err(Error::NoConvergence {
        iterations: NEWTON_MAX_ITERATIONS,
        residual: norm,
    })
}
