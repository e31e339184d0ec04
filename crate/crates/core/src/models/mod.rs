//! Worked systems in every representation the analysis uses.
//!
//! Default parameters are desk-scale circuit values; configuration can
//! override them.

pub mod boost;
pub mod forms;
pub mod rlc_zip;

pub use boost::{boost_converter, boost_duty_roots, boost_equilibrium, BoostParams};
pub use forms::{GradientForm, PortHamiltonianForm, ScalarField};
pub use rlc_zip::{in_set_b, parallel_rlc_zip, RlcZipParams};

use crate::error::{Error, Result};

pub(crate) fn positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: name.to_string(),
            reason: format!("must be finite and strictly positive, got {value}"),
        })
    }
}
