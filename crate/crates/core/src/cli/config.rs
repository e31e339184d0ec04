//! JSON run configuration. Unknown keys are rejected everywhere.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{BoostParams, RlcZipParams};
use crate::passivity::CheckTolerances;
use crate::sim::{Segment, Signal, SimConfig};

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub metric: Option<MetricSpec>,
    #[serde(default)]
    pub sampler: Option<SamplerSpec>,
    #[serde(default)]
    pub tolerances: Option<CheckTolerances>,
    #[serde(default)]
    pub simulation: Option<SimulationSpec>,
    #[serde(default)]
    pub controller: Option<ControllerSpec>,
    #[serde(default)]
    pub optimize: Option<OptimizeSpec>,
    #[serde(default)]
    pub interconnect: Option<InterconnectSpec>,
    /// Default seed for sampling and random signals; `--seed` overrides it.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// A model with its storage metric and certification region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub model: ModelSpec,
    #[serde(default)]
    pub metric: Option<MetricSpec>,
    #[serde(default)]
    pub sampler: Option<SamplerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Boost {
        #[serde(default)]
        params: BoostParams,
    },
    RlcZip {
        #[serde(default)]
        params: RlcZipParams,
    },
    PrimalDual {
        program: ProgramSpec,
    },
    CustomLinear {
        #[serde(rename = "A")]
        a: Rows,
        #[serde(rename = "B")]
        b: Rows,
    },
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Boost { .. } => "boost",
            ModelSpec::RlcZip { .. } => "rlc_zip",
            ModelSpec::PrimalDual { .. } => "primal_dual",
            ModelSpec::CustomLinear { .. } => "custom_linear",
        }
    }
}

/// Quadratic program `min ½xᵀPx + qᵀx  s.t.  A·x = b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramSpec {
    #[serde(rename = "P")]
    pub p: Rows,
    pub q: Vec<f64>,
    #[serde(rename = "A", default)]
    pub a: Rows,
    #[serde(default)]
    pub b: Vec<f64>,
    #[serde(default)]
    pub tau_x: Option<Rows>,
    #[serde(default)]
    pub tau_lambda: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    Explicit {
        #[serde(rename = "Q")]
        q: Rows,
    },
    /// `Q = ∇²H` of the port-Hamiltonian form.
    AutoPh,
    /// `Q = D·M·D` of the gradient form; `M` defaults to the model's weight.
    GradientInduced {
        #[serde(rename = "M", default)]
        m: Option<Rows>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// `G·V² ≥ P̄` for the RLC-ZIP circuit.
    SetB,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub state_bounds: Vec<[f64; 2]>,
    #[serde(default)]
    pub input_bounds: Vec<[f64; 2]>,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub region: Option<Region>,
}

fn default_count() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    Zero,
    Constant {
        value: Vec<f64>,
    },
    Schedule {
        segments: Vec<Segment>,
    },
    /// Equal-length segments with values uniform in `[−amplitude, amplitude]`.
    Random {
        segments: usize,
        amplitude: f64,
    },
}

impl SignalSpec {
    pub fn resolve(&self, dim: usize, t_end: f64, seed: u64) -> Signal {
        match self {
            SignalSpec::Zero => Signal::Zero,
            SignalSpec::Constant { value } => Signal::Constant {
                value: value.clone(),
            },
            SignalSpec::Schedule { segments } => Signal::Schedule {
                segments: segments.clone(),
            },
            SignalSpec::Random {
                segments,
                amplitude,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Signal::random_schedule(dim, t_end, *segments, *amplitude, &mut rng)
            }
        }
    }
}

fn default_signal() -> SignalSpec {
    SignalSpec::Zero
}

fn default_record_every() -> usize {
    1
}

fn default_dissipation_tolerance() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub t_end: f64,
    pub step: f64,
    /// Stacked initial state; optional when the command derives one.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    #[serde(default = "default_signal")]
    pub signal: SignalSpec,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Relative to the largest storage value.
    #[serde(default = "default_dissipation_tolerance")]
    pub dissipation_tolerance: f64,
}

impl SimulationSpec {
    pub fn to_config(&self, initial: Vec<f64>, signal_dim: usize, seed: u64) -> SimConfig {
        SimConfig::new(
            self.t_end,
            self.step,
            initial,
            self.signal.resolve(signal_dim, self.t_end, seed),
        )
        .record_every(self.record_every)
    }
}

fn default_band() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    #[serde(rename = "K1", default)]
    pub k1: Option<Rows>,
    #[serde(rename = "K2", default)]
    pub k2: Option<Rows>,
    /// Boost output-voltage setpoint.
    #[serde(default)]
    pub v_star: Option<f64>,
    #[serde(default)]
    pub equilibrium: Option<EquilibriumSpec>,
    /// Initial state `(x*, u*)·(1 + perturbation)` unless the simulation
    /// gives one.
    #[serde(default)]
    pub perturbation: Option<f64>,
    #[serde(default = "default_band")]
    pub band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumSpec {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

fn default_flow_step() -> f64 {
    1e-3
}

fn default_flow_time() -> f64 {
    1e3
}

fn default_flow_tolerance() -> f64 {
    1e-8
}

fn default_match_tolerance() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSpec {
    #[serde(default = "default_flow_step")]
    pub step: f64,
    #[serde(default = "default_flow_time")]
    pub max_time: f64,
    #[serde(default = "default_flow_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda0: Option<Vec<f64>>,
    /// Allowed distance between the flow endpoint and the direct solution.
    #[serde(default = "default_match_tolerance")]
    pub match_tolerance: f64,
}

impl Default for OptimizeSpec {
    fn default() -> Self {
        OptimizeSpec {
            step: default_flow_step(),
            max_time: default_flow_time(),
            tolerance: default_flow_tolerance(),
            x0: None,
            lambda0: None,
            match_tolerance: default_match_tolerance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterconnectSpec {
    pub second: SystemSpec,
}

impl RunConfig {
    pub fn system(&self) -> SystemSpec {
        SystemSpec {
            model: self.model.clone(),
            metric: self.metric.clone(),
            sampler: self.sampler.clone(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
