//! Fixed-step fourth-order Runge–Kutta.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::systems::OdeSystem;
use crate::error::{Error, Result};

/// Norm above which a trajectory counts as divergent.
pub const DIVERGENCE_NORM: f64 = 1e8;
/// Right-hand-side norm below which a step counts as stationary.
pub const CONVERGENCE_RHS: f64 = 1e-10;
/// Consecutive stationary steps required to stop early.
pub const CONVERGENCE_STEPS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// Reached `t_max`.
    Horizon,
    /// Stopped early because the right-hand side vanished.
    Converged,
    /// Norm exceeded the divergence threshold or became NaN.
    Diverged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    /// `P` flattened.
    Product,
    /// Excess quadratic error.
    Error,
    /// The system's conserved quantities.
    Conserved,
    /// `dP/dt` for scalar-product systems.
    DpDt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrateOptions {
    pub dt: f64,
    pub t_max: f64,
    /// Record every `k`-th step (the initial and final states are always kept).
    pub record_every: usize,
    pub monitors: Vec<Monitor>,
    /// Stop once the right-hand side stays below `CONVERGENCE_RHS`.
    pub stop_on_convergence: bool,
}

impl IntegrateOptions {
    pub fn new(dt: f64, t_max: f64) -> Self {
        IntegrateOptions {
            dt,
            t_max,
            record_every: 1,
            monitors: Vec::new(),
            stop_on_convergence: true,
        }
    }

    pub fn record_every(mut self, k: usize) -> Self {
        self.record_every = k.max(1);
        self
    }

    pub fn monitors(mut self, m: &[Monitor]) -> Self {
        self.monitors = m.to_vec();
        self
    }

    pub fn run_to_horizon(mut self) -> Self {
        self.stop_on_convergence = false;
        self
    }

    /// Keep about `n` records over the whole horizon.
    pub fn records(self, n: usize) -> Self {
        let steps = (self.t_max / self.dt).ceil() as usize;
        self.record_every((steps / n.max(1)).max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `monitors[k][i]` is monitor `i` (flattened) at record `k`.
    pub monitors: Vec<Vec<Vec<f64>>>,
    pub monitor_kinds: Vec<Monitor>,
    pub status: Status,
    pub steps: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one time")
    }

    /// Largest `|q(t) - q(0)|` over every component of monitor `kind`.
    pub fn max_drift(&self, kind: Monitor) -> Option<f64> {
        let i = self.monitor_kinds.iter().position(|&k| k == kind)?;
        let first = &self.monitors.first()?[i];
        Some(
            self.monitors
                .iter()
                .filter_map(|m| m.get(i))
                .flat_map(|m| m.iter().zip(first).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max),
        )
    }

    /// CSV with `t`, `x0..`, then one column per monitor component.
    pub fn write_csv(&self, path: &Path, preamble: &[String]) -> Result<()> {
        use std::io::Write;
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for line in preamble {
            writeln!(file, "# {line}").map_err(|e| Error::io(path, e))?;
        }
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.states[0].len()).map(|i| format!("x{i}")));
        if let Some(first) = self.monitors.first() {
            for (kind, vals) in self.monitor_kinds.iter().zip(first) {
                let name = format!("{kind:?}").to_lowercase();
                header.extend((0..vals.len()).map(|j| format!("{name}{j}")));
            }
        }
        w.write_record(&header)?;
        for (k, (t, s)) in self.times.iter().zip(&self.states).enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(s.iter().map(|x| x.to_string()));
            if let Some(m) = self.monitors.get(k) {
                row.extend(m.iter().flatten().map(|x| x.to_string()));
            }
            // A diverged final record carries no monitor values.
            row.resize(header.len(), String::new());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// One classical RK4 step of `dx/dt = f(x)`.
pub fn rk4_step(f: &impl Fn(&[f64]) -> Result<Vec<f64>>, x: &[f64], dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let k1 = f(x)?;
    let shifted = |k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    let k2 = f(&shifted(&k1, dt / 2.0))?;
    let k3 = f(&shifted(&k2, dt / 2.0))?;
    let k4 = f(&shifted(&k3, dt))?;
    let next = (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    Ok((next, k1))
}

/// Integrates any autonomous system; `monitor` maps a state to its records.
pub fn integrate_fn(
    f: impl Fn(&[f64]) -> Result<Vec<f64>>,
    monitor: impl Fn(&[f64]) -> Result<Vec<Vec<f64>>>,
    state0: &[f64],
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    if !(opts.dt > 0.0) || !(opts.t_max >= 0.0) {
        return Err(Error::InvalidArgument(format!("need dt > 0 and t_max >= 0 (dt={}, t_max={})", opts.dt, opts.t_max)));
    }
    let total = (opts.t_max / opts.dt).round() as usize;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![state0.to_vec()],
        monitors: vec![monitor(state0)?],
        monitor_kinds: Vec::new(),
        status: Status::Horizon,
        steps: 0,
    };
    let mut x = state0.to_vec();
    let mut quiet = 0usize;
    let every = opts.record_every.max(1);
    for step in 1..=total {
        let (next, k1) = match rk4_step(&f, &x, opts.dt) {
            Ok(v) => v,
            Err(Error::Domain(_)) if !norm(&x).is_finite() => {
                traj.status = Status::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        if opts.stop_on_convergence {
            quiet = if norm(&k1) < CONVERGENCE_RHS { quiet + 1 } else { 0 };
        }
        x = next;
        traj.steps = step;
        let n = norm(&x);
        let diverged = !n.is_finite() || n > DIVERGENCE_NORM;
        let done = diverged || step == total || (opts.stop_on_convergence && quiet >= CONVERGENCE_STEPS);
        if step % every == 0 || done {
            traj.times.push(step as f64 * opts.dt);
            traj.states.push(x.clone());
            traj.monitors.push(if diverged { Vec::new() } else { monitor(&x)? });
        }
        if diverged {
            traj.status = Status::Diverged;
            break;
        }
        if done {
            if step < total {
                traj.status = Status::Converged;
            }
            break;
        }
    }
    Ok(traj)
}

/// RK4 integration of an [`OdeSystem`] with the requested monitors.
pub fn integrate(system: &OdeSystem, state0: &[f64], opts: &IntegrateOptions) -> Result<Trajectory> {
    system.validate()?;
    system.check_state(state0)?;
    let monitor = |x: &[f64]| -> Result<Vec<Vec<f64>>> {
        opts.monitors
            .iter()
            .map(|m| match m {
                Monitor::Product => Ok(system.product(x)?.into_vec()),
                Monitor::Error => Ok(vec![system.excess_error(x)?]),
                Monitor::Conserved => system.conserved_quantities(x),
                Monitor::DpDt => Ok(system.dp_dt(x)?.into_iter().collect()),
            })
            .collect()
    };
    let mut traj = integrate_fn(|x| system.rhs(x), monitor, state0, opts)?;
    traj.monitor_kinds = opts.monitors.clone();
    Ok(traj)
}
