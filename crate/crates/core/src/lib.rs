//! Krasovskii passivity for input-affine nonlinear systems: sampled
//! certificates, storage and supply evaluation, passivity-based control,
//! interconnection, primal-dual optimization flows and deterministic
//! simulation.

pub mod cli;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod models;
pub mod optim;
pub mod passivity;
pub mod sim;

pub use dynamics::{
    find_equilibrium, Equilibrium, ExtendedSystem, InputAffineSystem, Jacobians, Label,
};
pub use error::{Error, Result};
pub use passivity::{CheckTolerances, PassivityCertificate, RegionSampler, StorageMetric};
pub use sim::{integrate, Signal, SimConfig, Trajectory};
