//! Parallel RLC circuit feeding a ZIP load
//!
//! ```text
//! L·İ = −R·I − V + u
//! C·V̇ = I − G·V − P̄/V − I_s
//! ```
//!
//! Gradient form: `diag(−L, C)·ẋ = ∇P + B·u` with
//! `P = ½R·I² + I·V − ½G·V² − P̄·ln V − I_s·V` and `B = (−1, 0)ᵀ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{InputAffineSystem, Label};
use crate::error::Result;
use crate::models::forms::{GradientForm, ScalarField};
use crate::models::positive;

/// Smallest admissible capacitor voltage; `ln V` and `P̄/V` are singular at 0.
pub const MIN_VOLTAGE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlcZipParams {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "G")]
    pub g: f64,
    /// Constant-power load (W).
    #[serde(rename = "P_bar")]
    pub p_bar: f64,
    /// Constant-current load (A).
    #[serde(rename = "I_s")]
    pub i_s: f64,
}

impl Default for RlcZipParams {
    fn default() -> Self {
        RlcZipParams {
            l: 0.01,
            c: 0.001,
            r: 0.5,
            g: 0.04,
            p_bar: 0.1,
            i_s: 0.1,
        }
    }
}

impl RlcZipParams {
    pub fn validate(&self) -> Result<()> {
        positive("L", self.l)?;
        positive("C", self.c)?;
        positive("R", self.r)?;
        positive("G", self.g)?;
        positive("P_bar", self.p_bar)?;
        positive("I_s", self.i_s)
    }

    /// Voltage on the boundary `G·V² = P̄` of the passive region.
    pub fn boundary_voltage(&self) -> f64 {
        (self.p_bar / self.g).sqrt()
    }

    pub fn energy_metric(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![self.l, self.c]))
    }

    pub fn pseudo_metric(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![-self.l, self.c]))
    }

    /// `M = diag(1/L, 1/C)`, for which `D·M·D = diag(L, C)`.
    pub fn gradient_weight(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 / self.l, 1.0 / self.c]))
    }

    /// `∇²P` at voltage `v`.
    pub fn potential_hessian(&self, v: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[self.r, 1.0, 1.0, -self.g + self.p_bar / (v * v)])
    }
}

pub fn state_labels() -> Vec<Label> {
    vec![Label::new("I", "A"), Label::new("V", "V")]
}

pub fn input_labels() -> Vec<Label> {
    vec![Label::new("u", "V")]
}

fn voltage_domain(x: &[f64]) -> std::result::Result<(), String> {
    if x[1] >= MIN_VOLTAGE {
        Ok(())
    } else {
        Err(format!("V = {} is below {MIN_VOLTAGE}", x[1]))
    }
}

/// Membership in `{G·V² ≥ P̄}`, the region where the Krasovskii condition
/// holds for the circuit.
pub fn in_set_b(p: &RlcZipParams, x: &[f64]) -> bool {
    p.g * x[1] * x[1] >= p.p_bar
}

/// ODE and gradient representations of the circuit.
pub fn parallel_rlc_zip(p: &RlcZipParams) -> Result<(InputAffineSystem, GradientForm)> {
    p.validate()?;
    let RlcZipParams {
        l,
        c,
        r,
        g,
        p_bar,
        i_s,
    } = *p;

    let ode = InputAffineSystem::builder("rlc_zip", 2, 1)
        .state_labels(state_labels())
        .input_labels(input_labels())
        .domain(voltage_domain)
        .drift(move |x, out| {
            let (i, v) = (x[0], x[1]);
            out[0] = (-r * i - v) / l;
            out[1] = (i - g * v - p_bar / v - i_s) / c;
        })
        .input_map(move |_, out| {
            out[0] = 1.0 / l;
            out[1] = 0.0;
        })
        .jacobians(
            move |x, out| {
                let v = x[1];
                out.copy_from_slice(&[-r / l, 1.0 / c, -1.0 / l, (-g + p_bar / (v * v)) / c]);
            },
            |_, out| out.fill(0.0),
        )
        .build()?;

    let potential = ScalarField::new(
        2,
        move |x| {
            let (i, v) = (x[0], x[1]);
            0.5 * r * i * i + i * v - 0.5 * g * v * v - p_bar * v.ln() - i_s * v
        },
        move |x, out| {
            let (i, v) = (x[0], x[1]);
            out[0] = r * i + v;
            out[1] = i - g * v - p_bar / v - i_s;
        },
        move |x, out| {
            let v = x[1];
            out.copy_from_slice(&[r, 1.0, 1.0, -g + p_bar / (v * v)]);
        },
    );
    let gradient = GradientForm::new(
        p.pseudo_metric(),
        potential,
        DMatrix::from_column_slice(2, 1, &[-1.0, 0.0]),
    )?
    .with_domain(voltage_domain);
    Ok((ode, gradient))
}
