//! Diagnostics for the general three-layer linear system.
//!
//! With `M = C1 A2`, `X = C1 Σ_TI Σ_II⁻¹` and
//! `V = M Mᵗ - A1 Xᵗ - X A1ᵗ`, one has `dV/dt = -2 W Σ_II Wᵗ ⪯ 0` where
//! `W = X - M A1`. So `V` is matrix-monotone and `C1 A2 A1 → X`.

use serde::{Deserialize, Serialize};

use super::integrate::Trajectory;
use super::systems::{split3, OdeSystem, Variant};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct General3Sample {
    pub t: f64,
    /// Max-abs change of `C1A2 + (C1A2)ᵗ - A1A1ᵗ` since `t = 0`.
    pub conserved_drift: f64,
    /// Largest eigenvalue of `dV/dt` (product rule on the actual right-hand side).
    pub dv_dt_max_eig: f64,
    /// Frobenius norm of `C1 A2 A1 - C1 Σ_TI Σ_II⁻¹`.
    pub residual: f64,
    pub a1_norm: f64,
}

struct Parts {
    n: [usize; 3],
    c1: Matrix,
    sii: Matrix,
    x: Matrix,
}

fn parts(system: &OdeSystem) -> Result<Parts> {
    let Variant::GeneralThreeLayer { sizes, c1, sigma_ii, sigma_ti } = &system.variant else {
        return Err(Error::InvalidArgument("monitor_general3 needs a general three-layer system".into()));
    };
    let x = c1.matmul(sigma_ti)?.matmul(&sigma_ii.inverse()?)?;
    Ok(Parts { n: *sizes, c1: c1.clone(), sii: sigma_ii.clone(), x })
}

fn v_matrix(p: &Parts, state: &[f64]) -> Result<Matrix> {
    let (a1, a2) = split3(state, p.n[0], p.n[1], p.n[2]);
    let m = p.c1.matmul(&a2)?;
    let ax = a1.matmul(&p.x.transpose())?;
    m.matmul(&m.transpose())?.sub(&ax)?.sub(&ax.transpose())
}

/// `V` at a state.
pub fn general3_v(system: &OdeSystem, state: &[f64]) -> Result<Matrix> {
    v_matrix(&parts(system)?, state)
}

/// `dV/dt` by the product rule using the system's right-hand side.
pub fn general3_dv_dt(system: &OdeSystem, state: &[f64]) -> Result<Matrix> {
    let p = parts(system)?;
    dv_dt(system, &p, state)
}

fn dv_dt(system: &OdeSystem, p: &Parts, state: &[f64]) -> Result<Matrix> {
    let [n0, n1, n2] = p.n;
    let (_, a2) = split3(state, n0, n1, n2);
    let d = system.rhs(state)?;
    let (da1, da2) = split3(&d, n0, n1, n2);
    let m = p.c1.matmul(&a2)?;
    let dm = p.c1.matmul(&da2)?;
    let dmm = dm.matmul(&m.transpose())?;
    let dax = da1.matmul(&p.x.transpose())?;
    dmm.add(&dmm.transpose())?.sub(&dax)?.sub(&dax.transpose())
}

/// `-2 W Σ_II Wᵗ`, the closed form of `dV/dt` in random mode.
pub fn general3_dv_dt_closed(system: &OdeSystem, state: &[f64]) -> Result<Matrix> {
    let p = parts(system)?;
    let (a1, a2) = split3(state, p.n[0], p.n[1], p.n[2]);
    let w = p.x.sub(&p.c1.matmul(&a2)?.matmul(&a1)?)?;
    Ok(w.matmul(&p.sii)?.matmul(&w.transpose())?.scale(-2.0))
}

/// Evaluates every diagnostic at each recorded state of `traj`.
pub fn monitor_general3(system: &OdeSystem, traj: &Trajectory) -> Result<Vec<General3Sample>> {
    let p = parts(system)?;
    let conserved0 = system.conserved_quantities(&traj.states[0])?;
    traj.times
        .iter()
        .zip(&traj.states)
        .map(|(&t, s)| {
            let (a1, a2) = split3(s, p.n[0], p.n[1], p.n[2]);
            let conserved = system.conserved_quantities(s)?;
            let drift = conserved.iter().zip(&conserved0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let dv = dv_dt(system, &p, s)?.symmetric_part()?;
            let eig = dv.symmetric_eigenvalues()?;
            let residual = p.c1.matmul(&a2)?.matmul(&a1)?.sub(&p.x)?.frobenius();
            Ok(General3Sample {
                t,
                conserved_drift: drift,
                dv_dt_max_eig: eig.last().copied().unwrap_or(0.0),
                residual,
                a1_norm: a1.frobenius(),
            })
        })
        .collect()
}

/// Largest eigenvalue of `V(t_{k+1}) - V(t_k)` over consecutive records.
pub fn max_v_increase(system: &OdeSystem, traj: &Trajectory) -> Result<f64> {
    let p = parts(system)?;
    let vs = traj.states.iter().map(|s| v_matrix(&p, s)).collect::<Result<Vec<_>>>()?;
    let mut worst = f64::NEG_INFINITY;
    for w in vs.windows(2) {
        let d = w[1].sub(&w[0])?.symmetric_part()?;
        worst = worst.max(*d.symmetric_eigenvalues()?.last().unwrap_or(&0.0));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sample_gaussian, SeededRng};

    #[test]
    fn product_rule_matches_closed_form() {
        let mut rng = SeededRng::new(11);
        let c1 = sample_gaussian(&mut rng, 2, 3, 1.0).unwrap();
        let g = sample_gaussian(&mut rng, 3, 3, 1.0).unwrap();
        let sii = g.matmul(&g.transpose()).unwrap().add(&Matrix::identity(3)).unwrap();
        let sti = sample_gaussian(&mut rng, 3, 3, 1.0).unwrap();
        let sys = OdeSystem::random(Variant::GeneralThreeLayer { sizes: [3, 2, 3], c1, sigma_ii: sii, sigma_ti: sti });
        let state: Vec<f64> = (0..12).map(|_| rng.standard_normal()).collect();
        let a = general3_dv_dt(&sys, &state).unwrap();
        let b = general3_dv_dt_closed(&sys, &state).unwrap();
        assert!(a.sub(&b).unwrap().max_abs() < 1e-10 * b.max_abs().max(1.0));
        assert!(*b.symmetric_eigenvalues().unwrap().last().unwrap() <= 1e-12);
    }
}
