//! Polynomial ODE systems for the averaged learning dynamics of small
//! networks: integration, closed-form fixed-point prediction, conserved
//! quantities and comparison with actual training.

pub mod classify;
pub mod empirical;
pub mod field;
pub mod integrate;
pub mod monitor;
pub mod polynomial;
pub mod predict;
pub mod systems;

pub use classify::{classify_1d, Classification, FixedPointReport};
pub use empirical::{align_moments, empirical_vs_ode, richardson, EmpiricalReport, RichardsonReport};
pub use field::{vector_field, FieldTable, GridSpec};
pub use integrate::{integrate, IntegrateOptions, Monitor, Status, Trajectory};
pub use polynomial::Polynomial;
pub use predict::{predict_a111, stability_a111, Stability};
pub use systems::{ChannelMode, DeepMode, OdeSystem, Variant};

use crate::error::{Error, Result};

/// Closed-form prediction for the systems that have one (random channel).
pub fn predict(system: &OdeSystem, state0: &[f64]) -> Result<FixedPointReport> {
    system.validate()?;
    system.check_state(state0)?;
    if system.mode != ChannelMode::Random {
        return Err(Error::InvalidArgument("closed-form predictions cover the random channel only".into()));
    }
    match &system.variant {
        Variant::A111 { c1, alpha, beta } => predict_a111(state0[0], state0[1], *c1, *alpha, *beta),
        Variant::A1111 { c1, c2, alpha, beta } => predict::predict_a1111(state0, *c1, *c2, *alpha, *beta),
        Variant::Chain { c, alpha, beta } => predict::predict_chain(state0, c, *alpha, *beta),
        Variant::ExpansiveA1N1 { c, alpha, beta } => predict::predict_a1n1(state0, c, *alpha, *beta),
        Variant::CompressiveAN1N { c, sigma_ii, sigma_ti } => {
            let id = crate::linalg::Matrix::identity(c.len());
            if !sigma_ii.sub(&id)?.max_abs().le(&1e-12) || !sigma_ti.sub(&id)?.max_abs().le(&1e-12) {
                return Err(Error::InvalidArgument("the N-1-N prediction assumes the autoencoder moments Σ_II = Σ_TI = Id".into()));
            }
            let n = c.len();
            predict::predict_autoencoder_n1n(&state0[..n], &state0[n..], c)
        }
        Variant::PowerA111 { mu, c1, alpha, beta, with_fprime: true, .. } => predict::predict_power_a111(state0, *mu, *c1, *alpha, *beta),
        _ => Err(Error::InvalidArgument(format!("no closed-form prediction for the {} system", system.name()))),
    }
}
