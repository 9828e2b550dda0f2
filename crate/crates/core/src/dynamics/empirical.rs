//! Full-batch training of the matching network against RK4 of its ODE.
//!
//! With learning rate `dt`, one batch step is an Euler step of the averaged
//! dynamics, so the gap to RK4 at the same step is first order in `dt`.

use serde::{Deserialize, Serialize};

use super::integrate::{integrate, IntegrateOptions, Status};
use super::systems::{ChannelMode, DeepMode, OdeSystem, Variant};
use crate::channel::{ChannelAlgorithm, ChannelModifiers, ChannelSpec};
use crate::data::{power_moments, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SeededRng};
use crate::net::{ActivationKind, Architecture, ForwardNet};
use crate::train::{sgd_step, Loss, TrainConfig, TrainState};

/// Relative tolerance when checking that the data moments match the system.
const MOMENT_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalReport {
    pub dt: f64,
    pub t_max: f64,
    pub steps: usize,
    /// Largest componentwise gap between trained weights and RK4 over the horizon.
    pub max_deviation: f64,
    pub final_deviation: f64,
    /// Largest change of each conserved quantity along the trained weights.
    pub sgd_coupling_drift: Vec<f64>,
    /// Same along the RK4 trajectory.
    pub ode_coupling_drift: Vec<f64>,
    pub final_weights: Vec<f64>,
    pub final_ode_state: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RichardsonReport {
    pub coarse: EmpiricalReport,
    pub fine: EmpiricalReport,
    /// `coarse.max_deviation / fine.max_deviation`; near 2 for a first-order gap.
    pub ratio: f64,
}

fn layer_sizes(system: &OdeSystem, data: &Dataset) -> Vec<usize> {
    match &system.variant {
        Variant::A111 { .. } | Variant::PowerA111 { .. } => vec![1, 1, 1],
        Variant::A1111 { .. } => vec![1, 1, 1, 1],
        Variant::Chain { c, .. } => vec![1; c.len() + 2],
        Variant::ExpansiveA1N1 { c, .. } => vec![1, c.len(), 1],
        Variant::CompressiveAN1N { c, .. } => vec![c.len(), 1, c.len()],
        Variant::GeneralThreeLayer { sizes, .. } => sizes.to_vec(),
        Variant::GeneralDeepLinear { sizes, .. } => {
            debug_assert_eq!(sizes[0], data.input_dim());
            sizes.clone()
        }
    }
}

/// Feedback matrices in the layout the channel stores them.
fn feedback(system: &OdeSystem) -> Vec<Matrix> {
    let one = |x: f64| Matrix::filled(1, 1, x);
    match &system.variant {
        Variant::A111 { c1, .. } | Variant::PowerA111 { c1, .. } => vec![one(*c1)],
        Variant::A1111 { c1, c2, .. } => vec![one(*c1), one(*c2)],
        Variant::Chain { c, .. } => c.iter().map(|&x| one(x)).collect(),
        Variant::ExpansiveA1N1 { c, .. } => vec![Matrix::column_vector(c)],
        Variant::CompressiveAN1N { c, .. } => vec![Matrix::row_vector(c)],
        Variant::GeneralThreeLayer { c1, .. } => vec![c1.clone()],
        Variant::GeneralDeepLinear { c, .. } => c.clone(),
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= MOMENT_TOL * a.abs().max(b.abs()).max(1.0)
}

fn close_matrix(a: &Matrix, b: &Matrix) -> bool {
    a.shape() == b.shape() && a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| close(*x, *y))
}

/// Copy of `system` whose moment parameters are those realized by `data`.
pub fn align_moments(system: &OdeSystem, data: &Dataset) -> Result<OdeSystem> {
    let (sii, sti) = data.second_moments()?;
    let scalar = |m: &Matrix| -> Result<f64> {
        if m.shape() != (1, 1) {
            return Err(Error::InvalidArgument(format!("{} needs scalar data", system.name())));
        }
        Ok(m[(0, 0)])
    };
    let mut out = system.clone();
    match &mut out.variant {
        Variant::A111 { alpha, beta, .. }
        | Variant::A1111 { alpha, beta, .. }
        | Variant::Chain { alpha, beta, .. }
        | Variant::ExpansiveA1N1 { alpha, beta, .. } => {
            *alpha = scalar(&sti)?;
            *beta = scalar(&sii)?;
        }
        Variant::PowerA111 { mu, alpha, beta, gamma, delta, .. } => {
            let m = power_moments(data, *mu)?;
            *alpha = m.alpha;
            *beta = m.beta;
            *gamma = m.gamma.unwrap_or(0.0);
            *delta = m.delta.unwrap_or(0.0);
        }
        Variant::CompressiveAN1N { sigma_ii, sigma_ti, .. }
        | Variant::GeneralThreeLayer { sigma_ii, sigma_ti, .. }
        | Variant::GeneralDeepLinear { sigma_ii, sigma_ti, .. } => {
            *sigma_ii = sii.symmetric_part()?;
            *sigma_ti = sti;
        }
    }
    Ok(out)
}

fn check_moments(system: &OdeSystem, data: &Dataset) -> Result<()> {
    let realized = align_moments(system, data)?;
    let ok = match (&system.variant, &realized.variant) {
        (Variant::A111 { alpha: a, beta: b, .. }, Variant::A111 { alpha: x, beta: y, .. })
        | (Variant::A1111 { alpha: a, beta: b, .. }, Variant::A1111 { alpha: x, beta: y, .. })
        | (Variant::Chain { alpha: a, beta: b, .. }, Variant::Chain { alpha: x, beta: y, .. })
        | (Variant::ExpansiveA1N1 { alpha: a, beta: b, .. }, Variant::ExpansiveA1N1 { alpha: x, beta: y, .. }) => {
            close(*a, *x) && close(*b, *y)
        }
        (
            Variant::PowerA111 { alpha: a, beta: b, gamma: g, delta: d, with_fprime, .. },
            Variant::PowerA111 { alpha: x, beta: y, gamma: u, delta: v, .. },
        ) => close(*a, *x) && close(*b, *y) && (*with_fprime || (close(*g, *u) && close(*d, *v))),
        (
            Variant::CompressiveAN1N { sigma_ii: a, sigma_ti: b, .. }
            | Variant::GeneralThreeLayer { sigma_ii: a, sigma_ti: b, .. }
            | Variant::GeneralDeepLinear { sigma_ii: a, sigma_ti: b, .. },
            Variant::CompressiveAN1N { sigma_ii: x, sigma_ti: y, .. }
            | Variant::GeneralThreeLayer { sigma_ii: x, sigma_ti: y, .. }
            | Variant::GeneralDeepLinear { sigma_ii: x, sigma_ti: y, .. },
        ) => close_matrix(a, x) && close_matrix(b, y),
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "data moments do not match the {} system; use align_moments",
            system.name()
        )))
    }
}

/// The network, channel and step configuration whose full-batch training
/// realizes `system` started from `state0`.
pub fn matching_setup(system: &OdeSystem, state0: &[f64], data: &Dataset, dt: f64) -> Result<(TrainState, TrainConfig)> {
    system.validate()?;
    system.check_state(state0)?;
    let sizes = layer_sizes(system, data);
    if data.input_dim() != sizes[0] || data.output_dim() != *sizes.last().unwrap() {
        return Err(Error::InvalidArgument(format!(
            "{} system needs {}-dimensional inputs and {}-dimensional targets",
            system.name(),
            sizes[0],
            sizes.last().unwrap()
        )));
    }
    let depth = sizes.len() - 1;
    let mut activations = vec![ActivationKind::Identity; depth];
    let mut modifiers = ChannelModifiers::default();
    if let Variant::PowerA111 { mu, with_fprime, .. } = system.variant {
        activations[0] = ActivationKind::Power(mu);
        modifiers.use_fprime = with_fprime;
    }
    let arch = Architecture::new(sizes.clone(), activations, false)?;
    let algorithm = match (system.mode, &system.variant) {
        (ChannelMode::Gradient, _) => ChannelAlgorithm::Bp,
        (ChannelMode::Random, Variant::GeneralDeepLinear { deep_mode: DeepMode::Rbp, .. }) => ChannelAlgorithm::Rbp,
        (ChannelMode::Random, _) => ChannelAlgorithm::Srbp,
    };
    let spec = ChannelSpec::with(algorithm, modifiers);
    let mut state = TrainState::new(&arch, &spec, &SeededRng::new(0))?;
    if algorithm != ChannelAlgorithm::Bp {
        state.channel.backward = feedback(system);
    }
    state.net = unflatten(&arch, state0)?;
    let config = TrainConfig {
        lr0: dt,
        decay: 0.0,
        momentum: 0.0,
        batch_size: data.len(),
        epochs: 1,
        loss: Loss::Mse,
        ..TrainConfig::default()
    };
    Ok((state, config))
}

fn unflatten(arch: &Architecture, state: &[f64]) -> Result<ForwardNet> {
    let mut weights = Vec::with_capacity(arch.depth());
    let mut off = 0;
    for w in arch.layer_sizes.windows(2) {
        let n = w[0] * w[1];
        weights.push(Matrix::from_vec(w[1], w[0], state[off..off + n].to_vec())?);
        off += n;
    }
    Ok(ForwardNet {
        arch: arch.clone(),
        weights,
        biases: Vec::new(),
    })
}

fn flatten(net: &ForwardNet) -> Vec<f64> {
    net.weights.iter().flat_map(|w| w.as_slice().iter().copied()).collect()
}

fn drift(start: &[f64], now: &[f64], worst: &mut [f64]) {
    for ((w, a), b) in worst.iter_mut().zip(now).zip(start) {
        *w = w.max((a - b).abs());
    }
}

/// Trains the matching network with full-batch steps of size `dt` and
/// compares against RK4 at the same step. `data` must realize the system's
/// moments (see [`align_moments`]).
pub fn empirical_vs_ode(system: &OdeSystem, state0: &[f64], data: &Dataset, dt: f64, t_max: f64) -> Result<EmpiricalReport> {
    check_moments(system, data)?;
    let (mut train, config) = matching_setup(system, state0, data, dt)?;
    let opts = IntegrateOptions::new(dt, t_max).run_to_horizon();
    let traj = integrate(system, state0, &opts)?;
    if traj.status == Status::Diverged {
        return Err(Error::Divergence(format!("RK4 reference left the bounded region at t={}", traj.final_time())));
    }
    let steps = traj.steps;
    let mut rng = SeededRng::new(0);
    let c0 = system.conserved_quantities(state0)?;
    let mut sgd_drift = vec![0.0; c0.len()];
    let mut ode_drift = vec![0.0; c0.len()];
    let mut max_dev: f64 = 0.0;
    let mut final_dev = 0.0;
    for k in 1..=steps {
        sgd_step(&mut train, &config, &data.inputs, &data.targets, &mut rng)?;
        let w = flatten(&train.net);
        if !w.iter().all(|x| x.is_finite()) {
            return Err(Error::Divergence(format!("training diverged at step {k}")));
        }
        let reference = &traj.states[k];
        final_dev = w.iter().zip(reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        max_dev = max_dev.max(final_dev);
        drift(&c0, &system.conserved_quantities(&w)?, &mut sgd_drift);
        drift(&c0, &system.conserved_quantities(reference)?, &mut ode_drift);
    }
    Ok(EmpiricalReport {
        dt,
        t_max,
        steps,
        max_deviation: max_dev,
        final_deviation: final_dev,
        sgd_coupling_drift: sgd_drift,
        ode_coupling_drift: ode_drift,
        final_weights: flatten(&train.net),
        final_ode_state: traj.final_state().to_vec(),
    })
}

/// Runs [`empirical_vs_ode`] at `dt` and `dt/2`.
pub fn richardson(system: &OdeSystem, state0: &[f64], data: &Dataset, dt: f64, t_max: f64) -> Result<RichardsonReport> {
    let coarse = empirical_vs_ode(system, state0, data, dt, t_max)?;
    let fine = empirical_vs_ode(system, state0, data, dt / 2.0, t_max)?;
    let ratio = coarse.max_deviation / fine.max_deviation;
    Ok(RichardsonReport { coarse, fine, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_multivariate, synthetic_power, synthetic_scalar, MomentSpec};

    fn scalar_data(alpha: f64, beta: f64) -> Dataset {
        synthetic_scalar(&MomentSpec::linear(alpha, beta), 200, &mut SeededRng::new(5)).unwrap()
    }

    #[test]
    fn fixed_point_start_stays_put() {
        let ds = scalar_data(1.0, 1.0);
        let sys = align_moments(&OdeSystem::random(Variant::A111 { c1: 1.0, alpha: 0.0, beta: 1.0 }), &ds).unwrap();
        let r = empirical_vs_ode(&sys, &[1.0, 1.0], &ds, 1e-2, 1.0).unwrap();
        assert!(r.max_deviation < 1e-12, "{}", r.max_deviation);
    }

    #[test]
    fn a111_first_order_gap() {
        let ds = scalar_data(1.0, 1.0);
        let sys = align_moments(&OdeSystem::random(Variant::A111 { c1: 1.0, alpha: 0.0, beta: 1.0 }), &ds).unwrap();
        let r = richardson(&sys, &[0.1, 0.2], &ds, 1e-2, 5.0).unwrap();
        assert!(r.coarse.max_deviation < 0.05);
        assert!((1.7..=2.3).contains(&r.ratio), "ratio {}", r.ratio);
    }

    #[test]
    fn mismatched_moments_rejected() {
        let ds = scalar_data(1.0, 1.0);
        let sys = OdeSystem::random(Variant::A111 { c1: 1.0, alpha: 2.0, beta: 1.0 });
        assert!(empirical_vs_ode(&sys, &[0.1, 0.2], &ds, 1e-2, 1.0).is_err());
        let three = OdeSystem::random(Variant::A1111 { c1: 1.0, c2: 1.0, alpha: 1.0, beta: 1.0 });
        assert!(empirical_vs_ode(&three, &[0.1, 0.2], &ds, 1e-2, 1.0).is_err());
    }

    #[test]
    fn gradient_and_matrix_variants_track() {
        let mut rng = SeededRng::new(9);
        let sii = Matrix::from_rows(&[vec![1.5, 0.2], vec![0.2, 0.8]]).unwrap();
        let sti = Matrix::from_rows(&[vec![0.7, -0.3], vec![0.1, 0.9]]).unwrap();
        let ds = synthetic_multivariate(&sii, &sti, 100, &mut rng).unwrap();
        let c1 = Matrix::from_rows(&[vec![1.0, 0.3], vec![-0.4, 0.8], vec![0.2, 0.5]]).unwrap();
        let base = Variant::GeneralThreeLayer { sizes: [2, 3, 2], c1, sigma_ii: sii, sigma_ti: sti };
        let state: Vec<f64> = (0..12).map(|i| 0.1 * ((i as f64) - 5.5) / 6.0).collect();
        for sys in [OdeSystem::random(base.clone()), OdeSystem::gradient(base.clone())] {
            let sys = align_moments(&sys, &ds).unwrap();
            let r = empirical_vs_ode(&sys, &state, &ds, 1e-2, 2.0).unwrap();
            assert!(r.max_deviation < 1e-2, "{}", r.max_deviation);
        }
    }

    #[test]
    fn power_unit_tracks() {
        let (ds, _) = synthetic_power(2.0, 1.0, 200, &mut SeededRng::new(3)).unwrap();
        let sys = OdeSystem::random(Variant::PowerA111 {
            mu: 2.0,
            c1: 1.0,
            alpha: 0.0,
            beta: 1.0,
            gamma: 0.0,
            delta: 0.0,
            with_fprime: true,
        });
        let sys = align_moments(&sys, &ds).unwrap();
        let r = empirical_vs_ode(&sys, &[0.5, 0.2], &ds, 1e-3, 2.0).unwrap();
        assert!(r.max_deviation < 1e-2, "{}", r.max_deviation);
    }
}
