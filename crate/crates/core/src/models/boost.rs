//! Averaged boost converter
//!
//! ```text
//! L·İ = −R·I − (1 − u)·V + Vs
//! C·V̇ = (1 − u)·I − G·V
//! ```
//!
//! with duty ratio `u`. The port-Hamiltonian form uses `H = ½(L·I² + C·V²)`,
//! an interconnection `(1 − u)/(LC)` split as `J0 + J1·u`, dissipation
//! `diag(R/L², G/C²)` and the source entering through `G·Vs` with
//! `G = (1/L, 0)ᵀ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Equilibrium, InputAffineSystem, Label};
use crate::error::{Error, Result};
use crate::models::forms::{PortHamiltonianForm, ScalarField};
use crate::models::positive;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostParams {
    /// Inductance (H).
    #[serde(rename = "L")]
    pub l: f64,
    /// Capacitance (F).
    #[serde(rename = "C")]
    pub c: f64,
    /// Series resistance (Ω).
    #[serde(rename = "R")]
    pub r: f64,
    /// Load conductance (S).
    #[serde(rename = "G")]
    pub g: f64,
    /// Source voltage (V).
    #[serde(rename = "Vs")]
    pub vs: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            l: 0.01,
            c: 0.001,
            r: 0.5,
            g: 0.04,
            vs: 12.0,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        positive("L", self.l)?;
        positive("C", self.c)?;
        positive("R", self.r)?;
        positive("G", self.g)?;
        positive("Vs", self.vs)
    }

    /// `∇²H = diag(L, C)`, the natural Krasovskii metric.
    pub fn energy_metric(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![self.l, self.c]))
    }
}

pub fn state_labels() -> Vec<Label> {
    vec![Label::new("I", "A"), Label::new("V", "V")]
}

pub fn input_labels() -> Vec<Label> {
    vec![Label::new("u", "1")]
}

/// ODE and port-Hamiltonian representations of the converter.
pub fn boost_converter(p: &BoostParams) -> Result<(InputAffineSystem, PortHamiltonianForm)> {
    p.validate()?;
    let BoostParams { l, c, r, g, vs } = *p;

    let ode = InputAffineSystem::builder("boost", 2, 1)
        .state_labels(state_labels())
        .input_labels(input_labels())
        .drift(move |x, out| {
            out[0] = (-r * x[0] - x[1] + vs) / l;
            out[1] = (x[0] - g * x[1]) / c;
        })
        .input_map(move |x, out| {
            out[0] = x[1] / l;
            out[1] = -x[0] / c;
        })
        .jacobians(
            move |_, out| out.copy_from_slice(&[-r / l, 1.0 / c, -1.0 / l, -g / c]),
            move |_, out| out.copy_from_slice(&[0.0, -1.0 / c, 1.0 / l, 0.0]),
        )
        .build()?;

    let k = 1.0 / (l * c);
    let j0 = DMatrix::from_row_slice(2, 2, &[0.0, -k, k, 0.0]);
    let j1 = DMatrix::from_row_slice(2, 2, &[0.0, k, -k, 0.0]);
    let dissipation = DMatrix::from_diagonal(&DVector::from_vec(vec![r / (l * l), g / (c * c)]));
    let port = DMatrix::from_column_slice(2, 1, &[1.0 / l, 0.0]);
    let ph = PortHamiltonianForm::new(
        j0,
        vec![j1],
        dissipation,
        port,
        DVector::from_vec(vec![vs]),
        ScalarField::quadratic(p.energy_metric()),
    )?;
    Ok((ode, ph))
}

/// Duty ratios `u*` that hold `V = v_star`, smaller duty ratio first.
///
/// With `a = 1 − u*` the equilibrium equations reduce to
/// `v_star·a² − Vs·a + R·G·v_star = 0`.
pub fn boost_duty_roots(p: &BoostParams, v_star: f64) -> Result<[f64; 2]> {
    p.validate()?;
    positive("V_star", v_star)?;
    let disc = p.vs * p.vs - 4.0 * v_star * v_star * p.r * p.g;
    // accept a discriminant that is zero up to rounding
    let disc = if disc < 0.0 && disc >= -1e-12 * p.vs * p.vs {
        0.0
    } else {
        disc
    };
    if disc < 0.0 {
        return Err(Error::Infeasible(format!(
            "V* = {v_star} V is unreachable (discriminant {disc:e})"
        )));
    }
    let sq = disc.sqrt();
    let a_hi = (p.vs + sq) / (2.0 * v_star);
    let a_lo = (p.vs - sq) / (2.0 * v_star);
    Ok([1.0 - a_hi, 1.0 - a_lo])
}

/// Forced equilibrium on the small-duty branch.
pub fn boost_equilibrium(p: &BoostParams, v_star: f64) -> Result<Equilibrium> {
    let [u_star, _] = boost_duty_roots(p, v_star)?;
    if !(0.0..=1.0).contains(&u_star) {
        return Err(Error::Regime(format!(
            "duty ratio {u_star} for V* = {v_star} V lies outside [0, 1]"
        )));
    }
    let i_star = p.g * v_star / (1.0 - u_star);
    let (ode, _) = boost_converter(p)?;
    Equilibrium::at(
        &ode,
        DVector::from_vec(vec![i_star, v_star]),
        DVector::from_vec(vec![u_star]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::EQUILIBRIUM_TOL;

    #[test]
    fn default_equilibrium_has_tiny_residual() {
        let p = BoostParams::default();
        let eq = boost_equilibrium(&p, 24.0).unwrap();
        assert!(eq.residual_norm <= EQUILIBRIUM_TOL, "{}", eq.residual_norm);
        assert!((0.0..=1.0).contains(&eq.u_star[0]));
        // independent closed form: a = (Vs + sqrt(Vs² − 4V²RG)) / 2V
        let a = (12.0 + (144.0_f64 - 4.0 * 576.0 * 0.02).sqrt()) / 48.0;
        assert!((eq.u_star[0] - (1.0 - a)).abs() < 1e-15);
        assert!((eq.x_star[0] - 0.04 * 24.0 / a).abs() < 1e-13);
    }

    #[test]
    fn double_root_at_zero_discriminant() {
        let p = BoostParams::default();
        let v = p.vs / (2.0 * (p.r * p.g).sqrt());
        let [u1, u2] = boost_duty_roots(&p, v).unwrap();
        assert!((u1 - u2).abs() < 1e-6);
        let eq = boost_equilibrium(&p, v).unwrap();
        assert!(eq.residual_norm <= 1e-9);
    }

    #[test]
    fn huge_setpoint_is_infeasible() {
        let err = boost_equilibrium(&BoostParams::default(), 1e4).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn buck_setpoint_leaves_regime() {
        // V* well below Vs needs a negative duty ratio
        let err = boost_equilibrium(&BoostParams::default(), 2.0).unwrap_err();
        assert!(matches!(err, Error::Regime(_)));
    }

    #[test]
    fn invalid_params_rejected() {
        let p = BoostParams {
            l: -1.0,
            ..BoostParams::default()
        };
        assert!(matches!(
            boost_converter(&p),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn full_duty_decouples_current_from_voltage() {
        let (ode, _) = boost_converter(&BoostParams::default()).unwrap();
        let u = DVector::from_vec(vec![1.0]);
        let a = ode
            .eval_vector_field(&DVector::from_vec(vec![1.0, 5.0]), &u)
            .unwrap();
        let b = ode
            .eval_vector_field(&DVector::from_vec(vec![1.0, 50.0]), &u)
            .unwrap();
        assert_eq!(a[0], b[0]);
    }
}
