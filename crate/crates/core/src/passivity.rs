//! Krasovskii storage `S_K = ½‖f(x,u)‖²_Q`, its supply output
//! `h_K = gᵀ(x)·Q·f(x,u)`, and sampled certificates for the sufficient
//! conditions
//!
//! ```text
//! Q_g0(x) = Q·∂g0/∂x + (∂g0/∂x)ᵀ·Q ≤ 0
//! Q_gi(x) = Q·∂gi/∂x + (∂gi/∂x)ᵀ·Q = 0,   i = 1..m
//! ```
//!
//! together with their port-Hamiltonian and gradient-system specialisations.
//! State-dependent matrix inequalities are checked pointwise on a
//! deterministic sample set; certificates record the worst margin seen.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{InputAffineSystem, Scratch};
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::models::{GradientForm, PortHamiltonianForm};
use crate::sim::Trajectory;

/// Symmetric positive semidefinite `Q` defining the Krasovskii storage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StorageMetric {
    #[serde(serialize_with = "crate::linalg::ser_matrix")]
    q: DMatrix<f64>,
    min_eigenvalue: f64,
    positive_definite: bool,
}

impl StorageMetric {
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::Dimension {
                what: "storage metric columns",
                expected: q.nrows(),
                got: q.ncols(),
            });
        }
        if !linalg::is_symmetric(&q, 1e-12) {
            return Err(Error::Definiteness {
                name: "Q".into(),
                property: "symmetric",
            });
        }
        let min_eigenvalue = linalg::min_eigenvalue(&q);
        if min_eigenvalue < -1e-10 {
            return Err(Error::Definiteness {
                name: "Q".into(),
                property: "positive semidefinite",
            });
        }
        let positive_definite = q.nrows() > 0 && min_eigenvalue > 1e-12 * linalg::max_abs(&q);
        Ok(StorageMetric {
            q,
            min_eigenvalue,
            positive_definite,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity is a valid metric")
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    /// Required when the storage doubles as a Lyapunov candidate.
    pub fn is_positive_definite(&self) -> bool {
        self.positive_definite
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(&self.q * alpha)
    }

    pub fn block_diagonal(parts: &[&StorageMetric]) -> Self {
        let blocks: Vec<&DMatrix<f64>> = parts.iter().map(|p| &p.q).collect();
        Self::new(linalg::block_diagonal(&blocks))
            .expect("blocks of valid metrics form a valid metric")
    }
}

/// One sample point `(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
}

impl Sample {
    fn stacked(&self) -> Vec<f64> {
        self.x.iter().chain(self.u.iter()).copied().collect()
    }
}

type Predicate = dyn Fn(&[f64], &[f64]) -> bool + Send + Sync;

/// Deterministic uniform sampler over a state-input box, optionally
/// restricted by a membership predicate (rejection sampling).
#[derive(Clone)]
pub struct RegionSampler {
    state_bounds: Vec<(f64, f64)>,
    input_bounds: Vec<(f64, f64)>,
    count: usize,
    seed: u64,
    predicate: Option<(String, Arc<Predicate>)>,
}

impl fmt::Debug for RegionSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegionSampler")
            .field("state_bounds", &self.state_bounds)
            .field("input_bounds", &self.input_bounds)
            .field("count", &self.count)
            .field("seed", &self.seed)
            .field("predicate", &self.predicate.as_ref().map(|p| &p.0))
            .finish()
    }
}

const MAX_REJECTIONS_PER_SAMPLE: usize = 1000;

impl RegionSampler {
    pub fn new(
        state_bounds: Vec<(f64, f64)>,
        input_bounds: Vec<(f64, f64)>,
        count: usize,
        seed: u64,
    ) -> Result<Self> {
        for &(lo, hi) in state_bounds.iter().chain(&input_bounds) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidParameter {
                    name: "sampler bounds".into(),
                    reason: format!("[{lo}, {hi}] is not a finite interval"),
                });
            }
        }
        if count == 0 {
            return Err(Error::InvalidParameter {
                name: "sampler count".into(),
                reason: "at least one sample is needed".into(),
            });
        }
        Ok(RegionSampler {
            state_bounds,
            input_bounds,
            count,
            seed,
            predicate: None,
        })
    }

    pub fn with_predicate(
        mut self,
        label: impl Into<String>,
        predicate: impl Fn(&[f64], &[f64]) -> bool + Send + Sync + 'static,
    ) -> Self {
        self.predicate = Some((label.into(), Arc::new(predicate)));
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn state_dim(&self) -> usize {
        self.state_bounds.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_bounds.len()
    }

    pub fn samples(&self) -> Result<Vec<Sample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let draw = |rng: &mut ChaCha8Rng, bounds: &[(f64, f64)]| -> DVector<f64> {
            DVector::from_iterator(
                bounds.len(),
                bounds.iter().map(
                    |&(lo, hi)| {
                        if lo == hi {
                            lo
                        } else {
                            rng.gen_range(lo..=hi)
                        }
                    },
                ),
            )
        };
        let mut out = Vec::with_capacity(self.count);
        let mut attempts = 0;
        while out.len() < self.count {
            if attempts >= MAX_REJECTIONS_PER_SAMPLE * self.count {
                return Err(Error::Sampling {
                    produced: out.len(),
                    requested: self.count,
                });
            }
            attempts += 1;
            let x = draw(&mut rng, &self.state_bounds);
            let u = draw(&mut rng, &self.input_bounds);
            let admitted = self
                .predicate
                .as_ref()
                .is_none_or(|(_, p)| p(x.as_slice(), u.as_slice()));
            if admitted {
                out.push(Sample { x, u });
            }
        }
        Ok(out)
    }
}

/// Tolerances for the negativity (`≤ 0`) and equality (`= 0`) conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckTolerances {
    pub negativity: f64,
    pub zero: f64,
}

impl Default for CheckTolerances {
    fn default() -> Self {
        CheckTolerances {
            negativity: 1e-9,
            zero: 1e-9,
        }
    }
}

/// Outcome of a sampled certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassivityCertificate {
    pub condition: String,
    /// Largest eigenvalue of the negativity-condition matrix over all samples.
    pub worst_margin: f64,
    /// Largest absolute entry of the equality-condition matrices.
    pub worst_input_margin: f64,
    pub samples: usize,
    pub tolerance: f64,
    pub tolerance_zero: f64,
    pub pass_negativity: bool,
    pub pass_equality: bool,
    pub pass: bool,
    /// `(x, u)` at which the negativity margin was largest.
    pub worst_sample: Vec<f64>,
}

impl PassivityCertificate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

/// Pointwise margins of one condition: `(max eigenvalue, max |entry|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margins {
    pub negativity: f64,
    pub equality: f64,
}

fn certify(
    condition: &str,
    samples: &[Sample],
    tols: CheckTolerances,
    mut margins_at: impl FnMut(&Sample) -> Result<Margins>,
) -> Result<PassivityCertificate> {
    let mut worst_margin = f64::NEG_INFINITY;
    let mut worst_input_margin = 0.0_f64;
    let mut worst_sample = Vec::new();
    for s in samples {
        let m = margins_at(s).map_err(|e| Error::Evaluation {
            sample: s.stacked(),
            message: e.to_string(),
        })?;
        if m.negativity > worst_margin {
            worst_margin = m.negativity;
            worst_sample = s.stacked();
        }
        worst_input_margin = worst_input_margin.max(m.equality);
    }
    let pass_negativity = worst_margin <= tols.negativity;
    let pass_equality = worst_input_margin <= tols.zero;
    Ok(PassivityCertificate {
        condition: condition.to_string(),
        worst_margin,
        worst_input_margin,
        samples: samples.len(),
        tolerance: tols.negativity,
        tolerance_zero: tols.zero,
        pass_negativity,
        pass_equality,
        pass: pass_negativity && pass_equality,
        worst_sample,
    })
}

/// `Q_g0(x)` and the `Q_gi(x)` at one state.
pub fn krasovskii_matrices(
    sys: &InputAffineSystem,
    q: &StorageMetric,
    x: &DVector<f64>,
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    check_dim("storage metric", sys.state_dim(), q.dim())?;
    let jac = sys.eval_jacobians(x)?;
    let q_g0 = linalg::lyapunov_product(q.matrix(), &jac.drift);
    let q_gi = jac
        .inputs
        .iter()
        .map(|ji| linalg::lyapunov_product(q.matrix(), ji))
        .collect();
    Ok((q_g0, q_gi))
}

pub fn prop1_margins(
    sys: &InputAffineSystem,
    q: &StorageMetric,
    x: &DVector<f64>,
) -> Result<Margins> {
    let (q_g0, q_gi) = krasovskii_matrices(sys, q, x)?;
    Ok(Margins {
        negativity: linalg::max_eigenvalue(&q_g0),
        equality: q_gi.iter().map(linalg::max_abs).fold(0.0, f64::max),
    })
}

/// Sampled check of `Q_g0 ≤ 0` and `Q_gi = 0` for a general input-affine
/// system.
pub fn check_prop1(
    sys: &InputAffineSystem,
    q: &StorageMetric,
    sampler: &RegionSampler,
    tols: CheckTolerances,
) -> Result<PassivityCertificate> {
    check_dim("storage metric", sys.state_dim(), q.dim())?;
    check_dim("sampler state bounds", sys.state_dim(), sampler.state_dim())?;
    let samples = sampler.samples()?;
    certify("krasovskii_sufficient", &samples, tols, |s| {
        prop1_margins(sys, q, &s.x)
    })
}

/// Pointwise margins for a port-Hamiltonian form:
/// `Q(J0−R)∇²H + ∇²H(−J0−R)Q ≤ 0` and `Q·Ji·∇²H − ∇²H·Ji·Q = 0`.
pub fn ph_margins(phs: &PortHamiltonianForm, q: &StorageMetric, hessian: &DMatrix<f64>) -> Margins {
    let qm = q.matrix();
    let j0 = phs.j0();
    let r = phs.dissipation();
    let cond = qm * (j0 - r) * hessian + hessian * (-j0 - r) * qm;
    let equality = phs
        .j_inputs()
        .iter()
        .map(|ji| linalg::max_abs(&(qm * ji * hessian - hessian * ji * qm)))
        .fold(0.0, f64::max);
    Margins {
        negativity: linalg::max_eigenvalue(&cond),
        equality,
    }
}

/// Port-Hamiltonian certificate. A constant Hessian is checked once.
pub fn check_ph(
    phs: &PortHamiltonianForm,
    q: &StorageMetric,
    sampler: &RegionSampler,
    tols: CheckTolerances,
) -> Result<PassivityCertificate> {
    check_dim("storage metric", phs.state_dim(), q.dim())?;
    check_dim("sampler state bounds", phs.state_dim(), sampler.state_dim())?;
    let mut samples = sampler.samples()?;
    let h = phs.hamiltonian();
    if let Some(hessian) = h.constant_hessian(phs.domain()) {
        samples.truncate(1);
        return certify("port_hamiltonian", &samples, tols, |_| {
            Ok(ph_margins(phs, q, &hessian))
        });
    }
    certify("port_hamiltonian", &samples, tols, |s| {
        if let Some(d) = phs.domain() {
            d(s.x.as_slice()).map_err(|reason| Error::Domain {
                system: "port_hamiltonian".into(),
                state: s.x.as_slice().to_vec(),
                reason,
            })?;
        }
        Ok(ph_margins(phs, q, &h.hessian(s.x.as_slice())))
    })
}

/// `Q := ∇²H` for a Hamiltonian with constant, positive semidefinite
/// Hessian. Any positive multiple is also admissible, see
/// [`StorageMetric::scaled`].
pub fn auto_metric_ph(phs: &PortHamiltonianForm) -> Result<StorageMetric> {
    let hessian = phs
        .hamiltonian()
        .constant_hessian(phs.domain())
        .ok_or_else(|| Error::NotApplicable("Hamiltonian Hessian is not constant".into()))?;
    let sym = (&hessian + hessian.transpose()) * 0.5;
    StorageMetric::new(sym)
}

pub fn gradient_margins(
    gsys: &GradientForm,
    weight: &DMatrix<f64>,
    hessian: &DMatrix<f64>,
) -> Margins {
    let d = gsys.metric();
    let cond = d * weight * hessian + hessian * weight * d;
    Margins {
        negativity: linalg::max_eigenvalue(&cond),
        equality: 0.0,
    }
}

/// Sampled check of `D·M·∇²P + ∇²P·M·D ≤ 0`. On success the induced
/// storage metric `Q = D·M·D` is returned alongside the certificate.
pub fn check_gradient(
    gsys: &GradientForm,
    weight: &DMatrix<f64>,
    sampler: &RegionSampler,
    tols: CheckTolerances,
) -> Result<(PassivityCertificate, Option<StorageMetric>)> {
    let n = gsys.state_dim();
    check_dim("gradient weight", n, weight.nrows())?;
    check_dim("sampler state bounds", n, sampler.state_dim())?;
    // validates symmetry and semidefiniteness of M
    StorageMetric::new(weight.clone())?;
    let samples = sampler.samples()?;
    let cert = certify("gradient", &samples, tols, |s| {
        gsys.check_domain(s.x.as_slice())?;
        Ok(gradient_margins(
            gsys,
            weight,
            &gsys.potential().hessian(s.x.as_slice()),
        ))
    })?;
    let metric = if cert.pass {
        let d = gsys.metric();
        let q = d * weight * d;
        Some(StorageMetric::new((&q + q.transpose()) * 0.5)?)
    } else {
        None
    };
    Ok((cert, metric))
}

/// `Bᵀ·M·f̃(x,u)`, the gradient-form supply output.
pub fn gradient_supply_output(
    gsys: &GradientForm,
    weight: &DMatrix<f64>,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let scaled = gsys.scaled_field(x, u)?;
    Ok(gsys.input_matrix().transpose() * weight * scaled)
}

/// Writes `h_K = gᵀQf` into `h` and returns `S_K = ½fᵀQf`.
pub(crate) fn storage_and_supply_into(
    sys: &InputAffineSystem,
    q: &DMatrix<f64>,
    x: &[f64],
    u: &[f64],
    h: &mut [f64],
) -> Result<f64> {
    let (n, m) = (sys.state_dim(), sys.input_dim());
    let mut g: Scratch = smallvec::SmallVec::from_elem(0.0, n * m);
    let mut f: Scratch = smallvec::SmallVec::from_elem(0.0, n);
    let mut qf: Scratch = smallvec::SmallVec::from_elem(0.0, n);
    sys.field_and_inputs_into(x, u, &mut g, &mut f)?;
    for (c, fc) in f.iter().enumerate() {
        if *fc != 0.0 {
            for r in 0..n {
                qf[r] += q[(r, c)] * fc;
            }
        }
    }
    for (j, hj) in h.iter_mut().enumerate() {
        *hj = g[j * n..(j + 1) * n]
            .iter()
            .zip(&qf)
            .map(|(a, b)| a * b)
            .sum();
    }
    Ok(0.5 * f.iter().zip(&qf).map(|(a, b)| a * b).sum::<f64>())
}

/// `S_K(x,u) = ½·f(x,u)ᵀ·Q·f(x,u)`.
pub fn storage(
    sys: &InputAffineSystem,
    q: &StorageMetric,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<f64> {
    check_dim("storage metric", sys.state_dim(), q.dim())?;
    let f = sys.eval_vector_field(x, u)?;
    Ok(0.5 * linalg::quad_form(q.matrix(), &f).max(0.0))
}

/// `h_K(x,u) = g(x)ᵀ·Q·f(x,u)`.
pub fn supply_output(
    sys: &InputAffineSystem,
    q: &StorageMetric,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim("storage metric", sys.state_dim(), q.dim())?;
    let f = sys.eval_vector_field(x, u)?;
    let g = sys.input_matrix(x)?;
    Ok(g.transpose() * (q.matrix() * f))
}

/// Residual series `r_k = supply_k − dS/dt(t_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DissipationSeries {
    pub residual: Vec<f64>,
    /// Samples that count towards pass/fail: interior points whose centered
    /// difference does not straddle a jump of the held input signal.
    pub included: Vec<bool>,
    /// `max_k |S(t_k)|`.
    pub storage_scale: f64,
}

/// Centered differences of `storage` at interior samples, one-sided at the
/// endpoints; endpoints and `kinks` are excluded from `included`.
pub fn dissipation_series(
    times: &[f64],
    storage: &[f64],
    supply: &[f64],
    kinks: &[bool],
) -> DissipationSeries {
    let len = times.len();
    assert_eq!(storage.len(), len);
    assert_eq!(supply.len(), len);
    let mut residual = vec![0.0; len];
    let mut included = vec![false; len];
    for k in 0..len {
        let rate = if len < 2 {
            0.0
        } else if k == 0 {
            (storage[1] - storage[0]) / (times[1] - times[0])
        } else if k == len - 1 {
            (storage[k] - storage[k - 1]) / (times[k] - times[k - 1])
        } else {
            included[k] = !kinks.get(k).copied().unwrap_or(false);
            (storage[k + 1] - storage[k - 1]) / (times[k + 1] - times[k - 1])
        };
        residual[k] = supply[k] - rate;
    }
    DissipationSeries {
        residual,
        included,
        storage_scale: storage.iter().fold(0.0, |a, s| a.max(s.abs())),
    }
}

/// `u_dᵀ·h_K − dS_K/dt` along a trajectory of the extended system.
pub fn dissipation_residual(
    traj: &Trajectory,
    sys: &InputAffineSystem,
    q: &StorageMetric,
) -> Result<DissipationSeries> {
    check_dim("storage metric", sys.state_dim(), q.dim())?;
    if !traj.has_rates() {
        return Err(Error::MissingChannel("input rate u_d".into()));
    }
    let m = sys.input_dim();
    let mut h = vec![0.0; m];
    let mut storage = Vec::with_capacity(traj.len());
    let mut supply = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        let s = storage_and_supply_into(sys, q.matrix(), traj.state(k), traj.input(k), &mut h)?;
        storage.push(s);
        supply.push(traj.rate(k).iter().zip(&h).map(|(a, b)| a * b).sum());
    }
    Ok(dissipation_series(
        traj.times(),
        &storage,
        &supply,
        traj.discontinuities(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_validation() {
        assert!(StorageMetric::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
        assert!(StorageMetric::new(DMatrix::from_row_slice(1, 1, &[-1.0])).is_err());
        let psd = StorageMetric::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert!(!psd.is_positive_definite());
        assert!(StorageMetric::identity(3).is_positive_definite());
    }

    #[test]
    fn storage_by_hand() {
        // f = (3, 4) everywhere
        let sys = InputAffineSystem::builder("const", 2, 0)
            .drift(|_, o| o.copy_from_slice(&[3.0, 4.0]))
            .input_map(|_, _| {})
            .build()
            .unwrap();
        let s = storage(
            &sys,
            &StorageMetric::identity(2),
            &DVector::zeros(2),
            &DVector::zeros(0),
        )
        .unwrap();
        assert_eq!(s, 12.5);
    }

    #[test]
    fn skew_input_field_breaks_equality_under_asymmetric_metric() {
        // g1(x) = (x2, −x1): ∂g1/∂x = [[0,1],[−1,0]]; with Q = diag(1,2)
        // Q·J + Jᵀ·Q = [[0,1],[−2,0]] + [[0,−2],[1,0]] = [[0,−1],[−1,0]]
        let sys = InputAffineSystem::builder("rot", 2, 1)
            .drift(|x, o| {
                o[0] = -x[0];
                o[1] = -x[1];
            })
            .input_map(|x, o| {
                o[0] = x[1];
                o[1] = -x[0];
            })
            .build()
            .unwrap();
        let q =
            StorageMetric::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]))).unwrap();
        let (_, q_gi) = krasovskii_matrices(&sys, &q, &DVector::from_vec(vec![0.3, 0.7])).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]);
        assert!(linalg::max_abs(&(&q_gi[0] - expected)) < 1e-8);
        let sampler = RegionSampler::new(vec![(-1.0, 1.0); 2], vec![(0.0, 1.0)], 20, 1).unwrap();
        let cert = check_prop1(&sys, &q, &sampler, CheckTolerances::default()).unwrap();
        assert!(cert.pass_negativity);
        assert!(!cert.pass_equality);
        assert!(!cert.pass);
        // identity metric makes the rotation skew: passes
        let cert = check_prop1(
            &sys,
            &StorageMetric::identity(2),
            &sampler,
            CheckTolerances::default(),
        )
        .unwrap();
        assert!(cert.pass, "{cert:?}");
    }

    #[test]
    fn sampler_respects_bounds_and_predicate() {
        let sampler = RegionSampler::new(vec![(0.0, 1.0), (2.0, 3.0)], vec![(5.0, 5.0)], 200, 9)
            .unwrap()
            .with_predicate("x1 > x0 + 1.5", |x, _| x[1] > x[0] + 1.5);
        let samples = sampler.samples().unwrap();
        assert_eq!(samples.len(), 200);
        for s in &samples {
            assert!((0.0..=1.0).contains(&s.x[0]));
            assert!((2.0..=3.0).contains(&s.x[1]));
            assert!(s.x[1] > s.x[0] + 1.5);
            assert_eq!(s.u[0], 5.0);
        }
        assert_eq!(samples, sampler.samples().unwrap());
    }

    #[test]
    fn impossible_predicate_reports_sampling_error() {
        let sampler = RegionSampler::new(vec![(0.0, 1.0)], vec![], 5, 0)
            .unwrap()
            .with_predicate("never", |_, _| false);
        assert!(matches!(
            sampler.samples(),
            Err(Error::Sampling { produced: 0, .. })
        ));
    }

    #[test]
    fn bad_bounds_rejected() {
        assert!(RegionSampler::new(vec![(1.0, 0.0)], vec![], 5, 0).is_err());
        assert!(RegionSampler::new(vec![(0.0, f64::NAN)], vec![], 5, 0).is_err());
        assert!(RegionSampler::new(vec![(0.0, 1.0)], vec![], 0, 0).is_err());
    }

    #[test]
    fn jacobian_failure_names_the_sample() {
        let sys = InputAffineSystem::builder("log", 1, 0)
            .drift(|x, o| o[0] = -x[0].ln())
            .input_map(|_, _| {})
            .domain(|x| {
                if x[0] > 0.0 {
                    Ok(())
                } else {
                    Err("x ≤ 0".into())
                }
            })
            .build()
            .unwrap();
        let sampler = RegionSampler::new(vec![(-1.0, -0.5)], vec![], 3, 0).unwrap();
        let err = check_prop1(
            &sys,
            &StorageMetric::identity(1),
            &sampler,
            CheckTolerances::default(),
        )
        .unwrap_err();
        match err {
            Error::Evaluation { sample, .. } => assert!(sample[0] < 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn series_uses_centered_differences_and_skips_kinks() {
        // S = t², supply = 2t exactly: interior residuals vanish
        let times: Vec<f64> = (0..6).map(|k| k as f64 * 0.5).collect();
        let storage: Vec<f64> = times.iter().map(|t| t * t).collect();
        let supply: Vec<f64> = times.iter().map(|t| 2.0 * t).collect();
        let mut kinks = vec![false; 6];
        kinks[3] = true;
        let series = dissipation_series(&times, &storage, &supply, &kinks);
        assert_eq!(series.included, vec![false, true, true, false, true, false]);
        for k in [1, 2, 4] {
            assert!(series.residual[k].abs() < 1e-12);
        }
        assert_eq!(series.storage_scale, 6.25);
    }
}
