//! Structured representations: port-Hamiltonian systems with
//! input-dependent interconnection, and gradient (Brayton–Moser type) systems.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{DomainFn, FieldFn, InputAffineSystem, Label};
use crate::error::{check_dim, Error, Result};
use crate::linalg;

const PROBES: usize = 10;
const PROBE_SEED: u64 = 0x4b52_4153;

/// A scalar function with gradient and Hessian evaluators (Hamiltonian or
/// potential).
#[derive(Clone)]
pub struct ScalarField {
    n: usize,
    value: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    gradient: Arc<FieldFn>,
    hessian: Arc<FieldFn>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField").field("n", &self.n).finish()
    }
}

impl ScalarField {
    pub fn new(
        n: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        hessian: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        ScalarField {
            n,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian: Arc::new(hessian),
        }
    }

    /// `½·xᵀ·W·x` for symmetric `W`.
    pub fn quadratic(w: DMatrix<f64>) -> Self {
        let n = w.nrows();
        let (w1, w2, w3) = (w.clone(), w.clone(), w);
        ScalarField::new(
            n,
            move |x| 0.5 * linalg::quad_form(&w1, &DVector::from_column_slice(x)),
            move |x, out| out.copy_from_slice((&w2 * DVector::from_column_slice(x)).as_slice()),
            move |_, out| out.copy_from_slice(w3.as_slice()),
        )
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        (self.gradient)(x, out.as_mut_slice());
        out
    }

    pub(crate) fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        (self.gradient)(x, out)
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        (self.hessian)(x, out.as_mut_slice());
        out
    }

    pub(crate) fn probes(&self, domain: Option<&DomainFn>) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
        let mut out = Vec::with_capacity(PROBES);
        let mut attempts = 0;
        while out.len() < PROBES && attempts < 1000 * PROBES {
            attempts += 1;
            let x: Vec<f64> = (0..self.n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            if domain.is_none_or(|d| d(&x).is_ok()) {
                out.push(x);
            }
        }
        out
    }

    /// The Hessian if it agrees at every probe state to `1e-9` (relative to
    /// `max(1, max|entry|)`).
    pub fn constant_hessian(&self, domain: Option<&DomainFn>) -> Option<DMatrix<f64>> {
        let probes = self.probes(domain);
        let first = self.hessian(probes.first()?);
        let scale = linalg::max_abs(&first).max(1.0);
        probes[1..]
            .iter()
            .all(|x| linalg::max_abs(&(self.hessian(x) - &first)) <= 1e-9 * scale)
            .then_some(first)
    }
}

/// `ẋ = (J0 + Σ Ji·ui − R)·∇H(x) + G·u_s`.
#[derive(Clone)]
pub struct PortHamiltonianForm {
    j0: DMatrix<f64>,
    j_inputs: Vec<DMatrix<f64>>,
    dissipation: DMatrix<f64>,
    port: DMatrix<f64>,
    constant_input: DVector<f64>,
    hamiltonian: ScalarField,
    domain: Option<Arc<DomainFn>>,
}

impl PortHamiltonianForm {
    pub fn new(
        j0: DMatrix<f64>,
        j_inputs: Vec<DMatrix<f64>>,
        dissipation: DMatrix<f64>,
        port: DMatrix<f64>,
        constant_input: DVector<f64>,
        hamiltonian: ScalarField,
    ) -> Result<Self> {
        let n = hamiltonian.dim();
        for (name, j) in std::iter::once(("J0", &j0)).chain(j_inputs.iter().map(|j| ("Ji", j))) {
            check_dim("interconnection matrix rows", n, j.nrows())?;
            if !linalg::is_skew_symmetric(j, 1e-12 * linalg::max_abs(j).max(1.0)) {
                return Err(Error::Definiteness {
                    name: name.into(),
                    property: "skew-symmetric",
                });
            }
        }
        check_dim("dissipation matrix rows", n, dissipation.nrows())?;
        let r_scale = linalg::max_abs(&dissipation).max(1.0);
        if !linalg::is_symmetric(&dissipation, 1e-12 * r_scale)
            || linalg::min_eigenvalue(&dissipation) < -1e-10 * r_scale
        {
            return Err(Error::Definiteness {
                name: "R".into(),
                property: "symmetric positive semidefinite",
            });
        }
        check_dim("port matrix rows", n, port.nrows())?;
        check_dim("constant input", port.ncols(), constant_input.len())?;
        let form = PortHamiltonianForm {
            j0,
            j_inputs,
            dissipation,
            port,
            constant_input,
            hamiltonian,
            domain: None,
        };
        form.check_hamiltonian_nonnegative()?;
        Ok(form)
    }

    pub fn with_domain(
        mut self,
        f: impl Fn(&[f64]) -> std::result::Result<(), String> + Send + Sync + 'static,
    ) -> Self {
        self.domain = Some(Arc::new(f));
        self
    }

    fn check_hamiltonian_nonnegative(&self) -> Result<()> {
        for x in self.hamiltonian.probes(self.domain.as_deref()) {
            let h = self.hamiltonian.value(&x);
            if h < 0.0 {
                return Err(Error::InvalidParameter {
                    name: "H".into(),
                    reason: format!("Hamiltonian is negative ({h}) at {x:?}"),
                });
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.j_inputs.len()
    }

    pub fn j0(&self) -> &DMatrix<f64> {
        &self.j0
    }

    pub fn j_inputs(&self) -> &[DMatrix<f64>] {
        &self.j_inputs
    }

    pub fn dissipation(&self) -> &DMatrix<f64> {
        &self.dissipation
    }

    pub fn hamiltonian(&self) -> &ScalarField {
        &self.hamiltonian
    }

    pub fn domain(&self) -> Option<&DomainFn> {
        self.domain.as_deref()
    }

    pub fn vector_field(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.state_dim(), x.len())?;
        check_dim("input", self.input_dim(), u.len())?;
        let grad = self.hamiltonian.gradient(x.as_slice());
        let j = self
            .j_inputs
            .iter()
            .zip(u.iter())
            .fold(&self.j0 - &self.dissipation, |acc, (ji, ui)| acc + ji * *ui);
        Ok(j * grad + &self.port * &self.constant_input)
    }

    /// The input-affine system with `g0 = (J0 − R)∇H + G·u_s` and
    /// `gi = Ji·∇H`, with analytic Jacobians `(J0 − R)∇²H` and `Ji·∇²H`.
    pub fn to_input_affine(
        &self,
        name: &str,
        states: Vec<Label>,
        inputs: Vec<Label>,
    ) -> Result<InputAffineSystem> {
        let n = self.state_dim();
        let m = self.input_dim();
        let a0 = &self.j0 - &self.dissipation;
        let offset = &self.port * &self.constant_input;
        let stacked_j = self.j_inputs.clone();
        let (h1, h2, h3, h4) = (
            self.hamiltonian.clone(),
            self.hamiltonian.clone(),
            self.hamiltonian.clone(),
            self.hamiltonian.clone(),
        );
        let (a0a, a0b) = (a0.clone(), a0);
        let (js1, js2) = (stacked_j.clone(), stacked_j);
        let mut builder = InputAffineSystem::builder(name, n, m)
            .state_labels(states)
            .input_labels(inputs)
            .drift(move |x, out| {
                let v = &a0a * h1.gradient(x) + &offset;
                out.copy_from_slice(v.as_slice());
            })
            .input_map(move |x, out| {
                let grad = h2.gradient(x);
                for (i, ji) in js1.iter().enumerate() {
                    out[i * n..(i + 1) * n].copy_from_slice((ji * &grad).as_slice());
                }
            })
            .jacobians(
                move |x, out| out.copy_from_slice((&a0b * h3.hessian(x)).as_slice()),
                move |x, out| {
                    let hess = h4.hessian(x);
                    for (i, ji) in js2.iter().enumerate() {
                        out[i * n * n..(i + 1) * n * n].copy_from_slice((ji * &hess).as_slice());
                    }
                },
            );
        if let Some(domain) = self.domain.clone() {
            builder = builder.domain(move |x| domain(x));
        }
        builder.build()
    }
}

impl fmt::Debug for PortHamiltonianForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PortHamiltonianForm")
            .field("j0", &self.j0)
            .field("j_inputs", &self.j_inputs)
            .field("dissipation", &self.dissipation)
            .field("port", &self.port)
            .field("constant_input", &self.constant_input)
            .field("has_domain", &self.domain.is_some())
            .finish()
    }
}

/// `D·ẋ = ∇P(x) + B·u` with symmetric nonsingular pseudo metric `D`.
#[derive(Clone)]
pub struct GradientForm {
    metric: DMatrix<f64>,
    metric_inv: DMatrix<f64>,
    potential: ScalarField,
    input_matrix: DMatrix<f64>,
    domain: Option<Arc<DomainFn>>,
}

impl fmt::Debug for GradientForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GradientForm")
            .field("metric", &self.metric)
            .field("input_matrix", &self.input_matrix)
            .field("has_domain", &self.domain.is_some())
            .finish()
    }
}

impl GradientForm {
    pub fn new(
        metric: DMatrix<f64>,
        potential: ScalarField,
        input_matrix: DMatrix<f64>,
    ) -> Result<Self> {
        let n = potential.dim();
        check_dim("pseudo metric rows", n, metric.nrows())?;
        check_dim("pseudo metric columns", n, metric.ncols())?;
        check_dim("input matrix rows", n, input_matrix.nrows())?;
        if !linalg::is_symmetric(&metric, 1e-12 * linalg::max_abs(&metric).max(1.0)) {
            return Err(Error::Definiteness {
                name: "D".into(),
                property: "symmetric",
            });
        }
        if metric.determinant().abs() <= 1e-12 {
            return Err(Error::Singular("pseudo metric D".into()));
        }
        let metric_inv = metric
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("pseudo metric D".into()))?;
        Ok(GradientForm {
            metric,
            metric_inv,
            potential,
            input_matrix,
            domain: None,
        })
    }

    pub fn with_domain(
        mut self,
        f: impl Fn(&[f64]) -> std::result::Result<(), String> + Send + Sync + 'static,
    ) -> Self {
        self.domain = Some(Arc::new(f));
        self
    }

    pub fn state_dim(&self) -> usize {
        self.potential.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.input_matrix.ncols()
    }

    pub fn metric(&self) -> &DMatrix<f64> {
        &self.metric
    }

    pub fn input_matrix(&self) -> &DMatrix<f64> {
        &self.input_matrix
    }

    pub fn potential(&self) -> &ScalarField {
        &self.potential
    }

    pub fn check_domain(&self, x: &[f64]) -> Result<()> {
        match &self.domain {
            Some(d) => d(x).map_err(|reason| Error::Domain {
                system: "gradient form".into(),
                state: x.to_vec(),
                reason,
            }),
            None => Ok(()),
        }
    }

    /// `f̃(x,u) = ∇P(x) + B·u`, i.e. `D·ẋ`.
    pub fn scaled_field(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.state_dim(), x.len())?;
        check_dim("input", self.input_dim(), u.len())?;
        self.check_domain(x.as_slice())?;
        Ok(self.potential.gradient(x.as_slice()) + &self.input_matrix * u)
    }

    pub fn vector_field(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.metric_inv * self.scaled_field(x, u)?)
    }

    pub fn to_input_affine(
        &self,
        name: &str,
        states: Vec<Label>,
        inputs: Vec<Label>,
    ) -> Result<InputAffineSystem> {
        let n = self.state_dim();
        let m = self.input_dim();
        let dinv = self.metric_inv.clone();
        let (p1, p2) = (self.potential.clone(), self.potential.clone());
        let (d1, d2) = (dinv.clone(), dinv);
        let g = &self.metric_inv * &self.input_matrix;
        let mut builder = InputAffineSystem::builder(name, n, m)
            .state_labels(states)
            .input_labels(inputs)
            .drift(move |x, out| out.copy_from_slice((&d1 * p1.gradient(x)).as_slice()))
            .input_map(move |_, out| out.copy_from_slice(g.as_slice()))
            .jacobians(
                move |x, out| out.copy_from_slice((&d2 * p2.hessian(x)).as_slice()),
                |_, out| out.fill(0.0),
            );
        if let Some(domain) = self.domain.clone() {
            builder = builder.domain(move |x| domain(x));
        }
        builder.build()
    }
}
