//! Fixed-step RK4 integration with zero-order-hold input signals, recorded
//! trajectories, CSV export and verification hooks.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ExtendedSystem, InputAffineSystem, Label};
use crate::error::{check_dim, Error, Result};
use crate::passivity::{self, DissipationSeries, StorageMetric};

/// Any state component beyond this magnitude aborts the integration.
pub const DIVERGENCE_THRESHOLD: f64 = 1e9;

/// Segment of a piecewise-constant schedule, active from `start` until the
/// next segment begins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start: f64,
    pub value: Vec<f64>,
}

/// Exogenous signal, held constant over each integration step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signal {
    Zero,
    Constant { value: Vec<f64> },
    Schedule { segments: Vec<Segment> },
}

impl Signal {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Signal::Zero => Ok(()),
            Signal::Constant { value } => {
                check_dim("signal value", dim, value.len())?;
                if finite(value) {
                    Ok(())
                } else {
                    Err(Error::NonFinite {
                        what: "constant signal".into(),
                    })
                }
            }
            Signal::Schedule { segments } => {
                let first = segments.first().ok_or_else(|| Error::InvalidParameter {
                    name: "schedule".into(),
                    reason: "needs at least one segment".into(),
                })?;
                if first.start > 0.0 {
                    return Err(Error::InvalidParameter {
                        name: "schedule".into(),
                        reason: format!("first segment starts at {} instead of 0", first.start),
                    });
                }
                for w in segments.windows(2) {
                    if w[1].start <= w[0].start || !w[1].start.is_finite() {
                        return Err(Error::InvalidParameter {
                            name: "schedule".into(),
                            reason: "segment starts must increase strictly".into(),
                        });
                    }
                }
                for s in segments {
                    check_dim("signal value", dim, s.value.len())?;
                    if !finite(&s.value) {
                        return Err(Error::NonFinite {
                            what: "schedule value".into(),
                        });
                    }
                }
                Ok(())
            }
        }
    }

    pub fn value_into(&self, t: f64, out: &mut [f64]) {
        match self {
            Signal::Zero => out.fill(0.0),
            Signal::Constant { value } => out.copy_from_slice(value),
            Signal::Schedule { segments } => {
                let idx = segments.partition_point(|s| s.start <= t).max(1) - 1;
                out.copy_from_slice(&segments[idx].value);
            }
        }
    }

    /// `segments` equal-length pieces over `[0, t_end)` with values uniform
    /// in `[−amplitude, amplitude]`.
    pub fn random_schedule(
        dim: usize,
        t_end: f64,
        segments: usize,
        amplitude: f64,
        rng: &mut impl Rng,
    ) -> Signal {
        let segments = (0..segments.max(1))
            .map(|k| Segment {
                start: t_end * k as f64 / segments.max(1) as f64,
                value: (0..dim)
                    .map(|_| rng.gen_range(-amplitude..=amplitude))
                    .collect(),
            })
            .collect();
        Signal::Schedule { segments }
    }
}

fn default_record_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub t_end: f64,
    pub step: f64,
    pub initial: Vec<f64>,
    #[serde(default = "signal_zero")]
    pub signal: Signal,
    /// Record every k-th step; the horizon is rounded up to a whole
    /// recording interval.
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

fn signal_zero() -> Signal {
    Signal::Zero
}

impl SimConfig {
    pub fn new(t_end: f64, step: f64, initial: Vec<f64>, signal: Signal) -> Self {
        SimConfig {
            t_end,
            step,
            initial,
            signal,
            record_every: 1,
        }
    }

    pub fn record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::InvalidParameter {
                name: "step".into(),
                reason: format!("must be positive, got {}", self.step),
            });
        }
        if !(self.t_end.is_finite() && self.t_end >= self.step) {
            return Err(Error::InvalidParameter {
                name: "t_end".into(),
                reason: format!("must be at least one step, got {}", self.t_end),
            });
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter {
                name: "record_every".into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        let raw = (self.t_end / self.step).round().max(1.0) as usize;
        raw.div_ceil(self.record_every) * self.record_every
    }
}

/// What an integrable model looks like to the integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub name: String,
    /// Dimension of the integrated state.
    pub dim: usize,
    pub signal_dim: usize,
    pub state_labels: Vec<Label>,
    pub input_labels: Vec<Label>,
    /// Whether `u_d` is recorded.
    pub has_rates: bool,
    /// Column prefix and labels when the signal is recorded separately
    /// from `u` and `u_d`.
    pub signal_labels: Option<(String, Vec<Label>)>,
}

pub trait SimModel {
    fn layout(&self) -> Layout;
    /// `dz = F(z, w)` for held signal `w`.
    fn rhs(&self, z: &[f64], w: &[f64], dz: &mut [f64]) -> Result<()>;
    /// Splits `z` into the recorded `x`, `u` and `u_d`.
    fn observe(
        &self,
        z: &[f64],
        w: &[f64],
        x: &mut [f64],
        u: &mut [f64],
        rate: &mut [f64],
    ) -> Result<()>;
}

/// A plant driven directly by its input signal.
impl SimModel for InputAffineSystem {
    fn layout(&self) -> Layout {
        Layout {
            name: self.name().to_string(),
            dim: self.state_dim(),
            signal_dim: self.input_dim(),
            state_labels: self.state_labels().to_vec(),
            input_labels: self.input_labels().to_vec(),
            has_rates: false,
            signal_labels: None,
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
        _rate: &mut [f64],
    ) -> Result<()> {
        x.copy_from_slice(z);
        u.copy_from_slice(w);
        Ok(())
    }
}

impl SimModel for ExtendedSystem {
    fn layout(&self) -> Layout {
        let base = self.base();
        Layout {
            name: format!("{}_extended", base.name()),
            dim: self.state_dim(),
            signal_dim: self.input_dim(),
            state_labels: base.state_labels().to_vec(),
            input_labels: base.input_labels().to_vec(),
            has_rates: true,
            signal_labels: None,
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
        rate.copy_from_slice(w);
        Ok(())
    }
}

/// Classical fourth-order Runge–Kutta stepper with reusable stage buffers.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Rk4 {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    pub fn step(
        &mut self,
        z: &mut [f64],
        h: f64,
        mut f: impl FnMut(&[f64], &mut [f64]) -> Result<()>,
    ) -> Result<()> {
        let Rk4 {
            k1,
            k2,
            k3,
            k4,
            tmp,
        } = self;
        f(z, k1)?;
        for i in 0..z.len() {
            tmp[i] = z[i] + 0.5 * h * k1[i];
        }
        f(tmp, k2)?;
        for i in 0..z.len() {
            tmp[i] = z[i] + 0.5 * h * k2[i];
        }
        f(tmp, k3)?;
        for i in 0..z.len() {
            tmp[i] = z[i] + h * k3[i];
        }
        f(tmp, k4)?;
        for i in 0..z.len() {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
    }
}

/// Recorded trajectory on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    name: String,
    state_labels: Vec<Label>,
    input_labels: Vec<Label>,
    signal_labels: Option<(String, Vec<Label>)>,
    times: Vec<f64>,
    states: Vec<f64>,
    inputs: Vec<f64>,
    rates: Option<Vec<f64>>,
    signals: Option<Vec<f64>>,
    discontinuity: Vec<bool>,
    channels: Vec<(String, Vec<f64>)>,
    metric: Option<DMatrix<f64>>,
}

impl Trajectory {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state_dim(&self) -> usize {
        self.state_labels.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_labels.len()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        let n = self.state_dim();
        &self.states[k * n..(k + 1) * n]
    }

    pub fn input(&self, k: usize) -> &[f64] {
        let m = self.input_dim();
        &self.inputs[k * m..(k + 1) * m]
    }

    pub fn has_rates(&self) -> bool {
        self.rates.is_some()
    }

    /// `u_d` at sample `k`; empty when rates are not recorded.
    pub fn rate(&self, k: usize) -> &[f64] {
        let m = self.input_dim();
        self.rates.as_ref().map_or(&[], |r| &r[k * m..(k + 1) * m])
    }

    pub fn signal(&self, k: usize) -> Option<&[f64]> {
        let d = self.signal_labels.as_ref()?.1.len();
        self.signals.as_ref().map(|s| &s[k * d..(k + 1) * d])
    }

    /// Samples whose centered difference straddles a jump of the held signal.
    pub fn discontinuities(&self) -> &[bool] {
        &self.discontinuity
    }

    /// `(x, u)` at sample `k`.
    pub fn stacked(&self, k: usize) -> Vec<f64> {
        self.state(k).iter().chain(self.input(k)).copied().collect()
    }

    pub fn last_stacked(&self) -> Vec<f64> {
        self.stacked(self.len() - 1)
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|(n, _)| n.as_str())
    }

    pub fn add_channel(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        check_dim("channel length", self.len(), values.len())?;
        let name = name.into();
        match self.channels.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = values,
            None => self.channels.push((name, values)),
        }
        Ok(())
    }

    pub fn metric(&self) -> Option<&DMatrix<f64>> {
        self.metric.as_ref()
    }

    /// Adds `S_K` and `h_K_<input>` channels computed with `q` and records
    /// the metric.
    pub fn attach_krasovskii(&mut self, sys: &InputAffineSystem, q: &StorageMetric) -> Result<()> {
        check_dim("trajectory state", sys.state_dim(), self.state_dim())?;
        check_dim("storage metric", sys.state_dim(), q.dim())?;
        let m = sys.input_dim();
        let mut s = Vec::with_capacity(self.len());
        let mut h_cols = vec![Vec::with_capacity(self.len()); m];
        let mut h = vec![0.0; m];
        for k in 0..self.len() {
            s.push(passivity::storage_and_supply_into(
                sys,
                q.matrix(),
                self.state(k),
                self.input(k),
                &mut h,
            )?);
            for (col, v) in h_cols.iter_mut().zip(&h) {
                col.push(*v);
            }
        }
        self.add_channel("S_K", s)?;
        let names: Vec<String> = self
            .input_labels
            .iter()
            .map(|l| format!("h_K_{}", l.name))
            .collect();
        for (name, col) in names.into_iter().zip(h_cols) {
            self.add_channel(name, col)?;
        }
        self.metric = Some(q.matrix().clone());
        Ok(())
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend(self.state_labels.iter().map(|l| format!("x_{}", l.name)));
        header.extend(self.input_labels.iter().map(|l| format!("u_{}", l.name)));
        if self.has_rates() {
            header.extend(self.input_labels.iter().map(|l| format!("ud_{}", l.name)));
        }
        if let Some((prefix, labels)) = &self.signal_labels {
            header.extend(labels.iter().map(|l| format!("{prefix}_{}", l.name)));
        }
        header.extend(self.channels.iter().map(|(n, _)| n.clone()));
        writeln!(w, "{}", header.join(","))?;
        let mut row = Vec::with_capacity(header.len());
        for k in 0..self.len() {
            row.clear();
            row.push(self.times[k]);
            row.extend_from_slice(self.state(k));
            row.extend_from_slice(self.input(k));
            row.extend_from_slice(self.rate(k));
            if let Some(s) = self.signal(k) {
                row.extend_from_slice(s);
            }
            row.extend(self.channels.iter().map(|(_, v)| v[k]));
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

fn guard(z: &[f64], t: f64) -> Result<()> {
    for (component, &value) in z.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                what: format!("state component {component} at t = {t}"),
            });
        }
        if value.abs() > DIVERGENCE_THRESHOLD {
            return Err(Error::Divergence {
                t,
                component,
                value,
            });
        }
    }
    Ok(())
}

fn at_time(t: f64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Domain { reason, state, .. } => Error::DomainExit {
            t,
            message: format!("{reason} (state {state:?})"),
        },
        other => other,
    }
}

/// Integrates `model` with classical RK4. The signal is held over each step
/// at its value at the step midpoint, so schedule breakpoints on the grid
/// are unaffected by rounding of `k·h`.
pub fn integrate<M: SimModel + ?Sized>(model: &M, cfg: &SimConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let layout = model.layout();
    check_dim("initial state", layout.dim, cfg.initial.len())?;
    cfg.signal.validate(layout.signal_dim)?;
    let (n, m) = (layout.state_labels.len(), layout.input_labels.len());
    let h = cfg.step;
    let steps = cfg.steps();
    let every = cfg.record_every;
    let records = steps / every + 1;

    let mut traj = Trajectory {
        name: layout.name.clone(),
        state_labels: layout.state_labels.clone(),
        input_labels: layout.input_labels.clone(),
        signal_labels: layout.signal_labels.clone(),
        times: Vec::with_capacity(records),
        states: Vec::with_capacity(records * n),
        inputs: Vec::with_capacity(records * m),
        rates: layout.has_rates.then(|| Vec::with_capacity(records * m)),
        signals: layout
            .signal_labels
            .as_ref()
            .map(|_| Vec::with_capacity(records * layout.signal_dim)),
        discontinuity: vec![false; records],
        channels: Vec::new(),
        metric: None,
    };

    let mut z = cfg.initial.clone();
    guard(&z, 0.0)?;
    let mut w = vec![0.0; layout.signal_dim];
    let mut w_prev = vec![0.0; layout.signal_dim];
    let (mut xo, mut uo, mut ro) = (vec![0.0; n], vec![0.0; m], vec![0.0; m]);
    let mut rk = Rk4::new(layout.dim);
    let mut switches = Vec::new();

    for k in 0..=steps {
        let t = k as f64 * h;
        cfg.signal.value_into(t + 0.5 * h, &mut w);
        if k > 0 && w != w_prev {
            switches.push(k);
        }
        if k % every == 0 {
            model
                .observe(&z, &w, &mut xo, &mut uo, &mut ro)
                .map_err(at_time(t))?;
            traj.times.push(t);
            traj.states.extend_from_slice(&xo);
            traj.inputs.extend_from_slice(&uo);
            if let Some(r) = traj.rates.as_mut() {
                r.extend_from_slice(&ro);
            }
            if let Some(s) = traj.signals.as_mut() {
                s.extend_from_slice(&w);
            }
        }
        if k == steps {
            break;
        }
        rk.step(&mut z, h, |zz, dz| model.rhs(zz, &w, dz))
            .map_err(at_time(t))?;
        guard(&z, t + h)?;
        std::mem::swap(&mut w, &mut w_prev);
    }
    // sample j uses S at steps (j±1)·every; a switch strictly inside that
    // span makes the centered difference meaningless
    for s in switches {
        let lo = s.saturating_sub(every) / every;
        let hi = s.div_ceil(every);
        for j in lo..=hi.min(records - 1) {
            let start = j.saturating_sub(1) * every;
            if start < s && s < (j + 1) * every {
                traj.discontinuity[j] = true;
            }
        }
    }
    Ok(traj)
}

/// Summary of a sampled dissipation inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipationReport {
    pub min_residual: f64,
    /// Absolute tolerance: `relative_tolerance · storage_scale`.
    pub tolerance: f64,
    pub relative_tolerance: f64,
    pub storage_scale: f64,
    pub evaluated: usize,
    pub violations: usize,
    pub first_violation_time: Option<f64>,
    pub pass: bool,
}

impl DissipationReport {
    pub fn from_series(series: &DissipationSeries, times: &[f64], relative_tolerance: f64) -> Self {
        let tolerance = relative_tolerance * series.storage_scale;
        let mut min_residual = f64::INFINITY;
        let mut evaluated = 0;
        let mut violations = 0;
        let mut first_violation_time = None;
        for (k, (&r, &inc)) in series.residual.iter().zip(&series.included).enumerate() {
            if !inc {
                continue;
            }
            evaluated += 1;
            min_residual = min_residual.min(r);
            if r < -tolerance {
                violations += 1;
                first_violation_time.get_or_insert(times[k]);
            }
        }
        DissipationReport {
            min_residual,
            tolerance,
            relative_tolerance,
            storage_scale: series.storage_scale,
            evaluated,
            violations,
            first_violation_time,
            pass: violations == 0,
        }
    }
}

/// Checks `u_dᵀh_K − dS_K/dt ≥ −tol·max S_K` along an extended-system
/// trajectory.
pub fn verify_dissipation(
    traj: &Trajectory,
    sys: &InputAffineSystem,
    q: &StorageMetric,
    relative_tolerance: f64,
) -> Result<DissipationReport> {
    let series = passivity::dissipation_residual(traj, sys, q)?;
    Ok(DissipationReport::from_series(
        &series,
        traj.times(),
        relative_tolerance,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceMetrics {
    /// First time after which the error stays within the band; `+∞` when it
    /// never settles within the horizon.
    pub settling_time: f64,
    pub final_error: f64,
}

/// Distance of `(x, u)` from `target` along the trajectory.
pub fn convergence_metrics(
    traj: &Trajectory,
    target: &[f64],
    band: f64,
) -> Result<ConvergenceMetrics> {
    check_dim(
        "convergence target",
        traj.state_dim() + traj.input_dim(),
        target.len(),
    )?;
    let error = |k: usize| -> f64 {
        traj.state(k)
            .iter()
            .chain(traj.input(k))
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let errors: Vec<f64> = (0..traj.len()).map(error).collect();
    let final_error = errors.last().copied().unwrap_or(f64::INFINITY);
    let settling_time = match errors.iter().rposition(|e| !(*e <= band)) {
        None => traj.times().first().copied().unwrap_or(0.0),
        Some(k) if k + 1 == errors.len() => f64::INFINITY,
        Some(k) => traj.times()[k + 1],
    };
    Ok(ConvergenceMetrics {
        settling_time,
        final_error,
    })
}
