//! Averaged learning dynamics of small linear (and one power-unit) networks.
//!
//! Each system describes `dθ/dt` for the forward weights `θ` when the
//! learning rate is identified with the time step. The random mode uses the
//! fixed feedback weights of the learning channel; the gradient mode replaces
//! them with the transposed forward weights.
//!
//! State layouts (row-major for matrices):
//!
//! | variant                | state                         |
//! |------------------------|-------------------------------|
//! | `A111`                 | `a1, a2`                      |
//! | `A1111`, `Chain`       | `a1, …, aL`                   |
//! | `ExpansiveA1N1`        | `a1..aN, b1..bN`              |
//! | `CompressiveAN1N`      | `A (1xN), B (Nx1)`            |
//! | `GeneralThreeLayer`    | `A1 (N1xN0), A2 (N2xN1)`      |
//! | `GeneralDeepLinear`    | `A1, …, AL`, `Ai` is `Ni x Ni-1` |
//! | `PowerA111`            | `a1, a2`                      |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    #[default]
    Random,
    Gradient,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeepMode {
    /// `C_i` is `N_i x N_L`.
    #[default]
    Srbp,
    /// `C_i` is `N_i x N_{i+1}`; the effective feedback is `C_i ⋯ C_{L-1}`.
    Rbp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant", deny_unknown_fields)]
pub enum Variant {
    A111 {
        c1: f64,
        alpha: f64,
        beta: f64,
    },
    A1111 {
        c1: f64,
        c2: f64,
        alpha: f64,
        beta: f64,
    },
    /// `L = c.len() + 1` forward weights; `c_L = 1` is implicit.
    Chain {
        c: Vec<f64>,
        alpha: f64,
        beta: f64,
    },
    ExpansiveA1N1 {
        c: Vec<f64>,
        alpha: f64,
        beta: f64,
    },
    CompressiveAN1N {
        /// Feedback row `C`, length `N`.
        c: Vec<f64>,
        sigma_ii: Matrix,
        sigma_ti: Matrix,
    },
    GeneralThreeLayer {
        sizes: [usize; 3],
        /// `N1 x N2`.
        c1: Matrix,
        sigma_ii: Matrix,
        sigma_ti: Matrix,
    },
    GeneralDeepLinear {
        sizes: Vec<usize>,
        c: Vec<Matrix>,
        sigma_ii: Matrix,
        sigma_ti: Matrix,
        #[serde(default)]
        deep_mode: DeepMode,
    },
    /// Hidden unit `O = S^mu`. With the derivative, `alpha = E(T I^mu)` and
    /// `beta = E(I^{2mu})`; the derivative-free system also uses
    /// `gamma = E(TI)` and `delta = E(I^{mu+1})`.
    PowerA111 {
        mu: f64,
        c1: f64,
        alpha: f64,
        beta: f64,
        #[serde(default)]
        gamma: f64,
        #[serde(default)]
        delta: f64,
        #[serde(default = "default_true")]
        with_fprime: bool,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeSystem {
    pub variant: Variant,
    #[serde(default)]
    pub mode: ChannelMode,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidArgument(msg()))
    }
}

fn product(a: &[f64]) -> f64 {
    a.iter().product()
}

/// Product of every entry except index `i` (no division, so zeros are fine).
fn product_except(a: &[f64], i: usize) -> f64 {
    a.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, x)| x).product()
}

fn mat(rows: usize, cols: usize, data: &[f64]) -> Matrix {
    Matrix::from_vec(rows, cols, data.to_vec()).expect("state slice has the declared size")
}

impl OdeSystem {
    pub fn new(variant: Variant, mode: ChannelMode) -> Self {
        OdeSystem { variant, mode }
    }

    pub fn random(variant: Variant) -> Self {
        OdeSystem::new(variant, ChannelMode::Random)
    }

    pub fn gradient(variant: Variant) -> Self {
        OdeSystem::new(variant, ChannelMode::Gradient)
    }

    pub fn name(&self) -> &'static str {
        match self.variant {
            Variant::A111 { .. } => "a111",
            Variant::A1111 { .. } => "a1111",
            Variant::Chain { .. } => "chain",
            Variant::ExpansiveA1N1 { .. } => "expansive_a1n1",
            Variant::CompressiveAN1N { .. } => "compressive_an1n",
            Variant::GeneralThreeLayer { .. } => "general_three_layer",
            Variant::GeneralDeepLinear { .. } => "general_deep_linear",
            Variant::PowerA111 { .. } => "power_a111",
        }
    }

    pub fn state_dim(&self) -> usize {
        match &self.variant {
            Variant::A111 { .. } | Variant::PowerA111 { .. } => 2,
            Variant::A1111 { .. } => 3,
            Variant::Chain { c, .. } => c.len() + 1,
            Variant::ExpansiveA1N1 { c, .. } | Variant::CompressiveAN1N { c, .. } => 2 * c.len(),
            Variant::GeneralThreeLayer { sizes: [n0, n1, n2], .. } => n1 * n0 + n2 * n1,
            Variant::GeneralDeepLinear { sizes, .. } => sizes.windows(2).map(|w| w[0] * w[1]).sum(),
        }
    }

    /// Scalar chains as `(c_1, …, c_{L-1}, 1)`, with `(alpha, beta)`.
    fn chain_view(&self) -> Option<(Vec<f64>, f64, f64)> {
        match &self.variant {
            Variant::A111 { c1, alpha, beta } => Some((vec![*c1, 1.0], *alpha, *beta)),
            Variant::A1111 { c1, c2, alpha, beta } => Some((vec![*c1, *c2, 1.0], *alpha, *beta)),
            Variant::Chain { c, alpha, beta } => {
                let mut full = c.clone();
                full.push(1.0);
                Some((full, *alpha, *beta))
            }
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.variant {
            Variant::A111 { beta, .. }
            | Variant::A1111 { beta, .. }
            | Variant::Chain { beta, .. }
            | Variant::ExpansiveA1N1 { beta, .. }
            | Variant::PowerA111 { beta, .. } => check(*beta > 0.0, || format!("beta must be positive, got {beta}"))?,
            _ => {}
        }
        match &self.variant {
            Variant::Chain { c, .. } => check(!c.is_empty(), || "a chain needs at least two weights".into()),
            Variant::ExpansiveA1N1 { c, .. } => check(!c.is_empty(), || "N must be positive".into()),
            Variant::CompressiveAN1N { c, sigma_ii, sigma_ti } => {
                let n = c.len();
                check(n > 0, || "N must be positive".into())?;
                check(sigma_ii.shape() == (n, n) && sigma_ti.shape() == (n, n), || format!("moment matrices must be {n}x{n}"))?;
                check_spd(sigma_ii)
            }
            Variant::GeneralThreeLayer { sizes: [n0, n1, n2], c1, sigma_ii, sigma_ti } => {
                check(c1.shape() == (*n1, *n2), || format!("C1 must be {n1}x{n2}"))?;
                check(sigma_ii.shape() == (*n0, *n0), || format!("Σ_II must be {n0}x{n0}"))?;
                check(sigma_ti.shape() == (*n2, *n0), || format!("Σ_TI must be {n2}x{n0}"))?;
                check_spd(sigma_ii)
            }
            Variant::GeneralDeepLinear { sizes, c, sigma_ii, sigma_ti, deep_mode } => {
                let l = sizes.len().saturating_sub(1);
                check(l >= 1, || "need at least one layer".into())?;
                check(c.len() == l - 1, || format!("expected {} feedback matrices, got {}", l - 1, c.len()))?;
                for (i, ci) in c.iter().enumerate() {
                    let want = match deep_mode {
                        DeepMode::Srbp => (sizes[i + 1], sizes[l]),
                        DeepMode::Rbp => (sizes[i + 1], sizes[i + 2]),
                    };
                    check(ci.shape() == want, || format!("C_{} must be {}x{}", i + 1, want.0, want.1))?;
                }
                check(sigma_ii.shape() == (sizes[0], sizes[0]), || "Σ_II shape".into())?;
                check(sigma_ti.shape() == (sizes[l], sizes[0]), || "Σ_TI shape".into())?;
                check_spd(sigma_ii)
            }
            Variant::PowerA111 { mu, with_fprime, .. } => {
                check(*mu > 0.0, || "mu must be positive".into())?;
                check(*with_fprime || self.mode == ChannelMode::Random, || {
                    "the derivative-free power system has no gradient counterpart".into()
                })
            }
            _ => Ok(()),
        }
    }

    pub fn check_state(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.state_dim() {
            return Err(Error::InvalidArgument(format!(
                "{} state has {} entries, expected {}",
                self.name(),
                state.len(),
                self.state_dim()
            )));
        }
        Ok(())
    }

    /// Right-hand side `dθ/dt`.
    pub fn rhs(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let gradient = self.mode == ChannelMode::Gradient;
        if let Some((c, alpha, beta)) = self.chain_view() {
            let e = alpha - beta * product(state);
            return Ok((0..state.len())
                .map(|i| {
                    if gradient {
                        product_except(state, i) * e
                    } else {
                        c[i] * product(&state[..i]) * e
                    }
                })
                .collect());
        }
        match &self.variant {
            Variant::ExpansiveA1N1 { c, alpha, beta } => {
                let n = c.len();
                let (a, b) = state.split_at(n);
                let e = alpha - beta * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                let da = (0..n).map(|i| if gradient { b[i] } else { c[i] } * e);
                let db = a.iter().map(|x| x * e);
                Ok(da.chain(db).collect())
            }
            Variant::CompressiveAN1N { c, sigma_ii, sigma_ti } => {
                let n = c.len();
                let a = mat(1, n, &state[..n]);
                let b = mat(n, 1, &state[n..]);
                let e = sigma_ti.sub(&b.matmul(&a)?.matmul(sigma_ii)?)?;
                let feedback = if gradient { b.transpose() } else { mat(1, n, c) };
                let da = feedback.matmul(&e)?;
                let db = e.matmul(&a.transpose())?;
                Ok(da.into_vec().into_iter().chain(db.into_vec()).collect())
            }
            Variant::GeneralThreeLayer { sizes: [n0, n1, n2], c1, sigma_ii, sigma_ti } => {
                let (a1, a2) = split3(state, *n0, *n1, *n2);
                let e = sigma_ti.sub(&a2.matmul(&a1)?.matmul(sigma_ii)?)?;
                let da2 = e.matmul(&a1.transpose())?;
                let feedback = if gradient { a2.transpose() } else { c1.clone() };
                let da1 = feedback.matmul(&e)?;
                Ok(da1.into_vec().into_iter().chain(da2.into_vec()).collect())
            }
            Variant::GeneralDeepLinear { sizes, sigma_ii, sigma_ti, .. } => {
                let a = split_deep(state, sizes);
                let l = a.len();
                let p = chain_product(&a, 0, l)?;
                let e = sigma_ti.sub(&p.matmul(sigma_ii)?)?;
                let feedback = if gradient {
                    (0..l)
                        .map(|i| chain_product(&a, i + 1, l).map(|m| m.transpose()))
                        .collect::<Result<Vec<_>>>()?
                } else {
                    self.deep_feedback()?
                };
                let mut out = Vec::with_capacity(state.len());
                for i in 0..l {
                    let below = chain_product(&a, 0, i)?.transpose();
                    let right = if i == 0 { e.clone() } else { e.matmul(&below)? };
                    out.extend(feedback[i].matmul(&right)?.into_vec());
                }
                Ok(out)
            }
            Variant::PowerA111 { mu, c1, alpha, beta, gamma, delta, with_fprime } => {
                let (a1, a2) = (state[0], state[1]);
                let u = power(a1, *mu)?;
                let e = alpha - beta * a2 * u;
                if !with_fprime {
                    return Ok(vec![c1 * (gamma - delta * a2 * u), u * e]);
                }
                let slope = mu * power(a1, mu - 1.0)?;
                let fb = if gradient { a2 } else { *c1 };
                Ok(vec![fb * slope * e, u * e])
            }
            _ => unreachable!("scalar chains handled above"),
        }
    }

    /// Effective feedback `B_i` per layer for the general deep system:
    /// `C_i` (SRBP) or `C_i ⋯ C_{L-1}` (RBP), with `B_L = Id`.
    pub fn deep_feedback(&self) -> Result<Vec<Matrix>> {
        let Variant::GeneralDeepLinear { sizes, c, deep_mode, .. } = &self.variant else {
            return Err(Error::InvalidArgument("deep_feedback needs a general deep system".into()));
        };
        let l = sizes.len() - 1;
        let mut out = vec![Matrix::identity(sizes[l]); l];
        match deep_mode {
            DeepMode::Srbp => out[..l - 1].clone_from_slice(c),
            DeepMode::Rbp => {
                for i in (0..l - 1).rev() {
                    out[i] = c[i].matmul(&out[i + 1])?;
                }
            }
        }
        Ok(out)
    }

    /// The input-output map `P` (a `1x1` matrix for scalar systems).
    pub fn product(&self, state: &[f64]) -> Result<Matrix> {
        self.check_state(state)?;
        if self.chain_view().is_some() {
            return Ok(Matrix::filled(1, 1, product(state)));
        }
        match &self.variant {
            Variant::ExpansiveA1N1 { c, .. } => {
                let (a, b) = state.split_at(c.len());
                Ok(Matrix::filled(1, 1, a.iter().zip(b).map(|(x, y)| x * y).sum()))
            }
            Variant::CompressiveAN1N { c, .. } => {
                let n = c.len();
                mat(n, 1, &state[n..]).matmul(&mat(1, n, &state[..n]))
            }
            Variant::GeneralThreeLayer { sizes: [n0, n1, n2], .. } => {
                let (a1, a2) = split3(state, *n0, *n1, *n2);
                a2.matmul(&a1)
            }
            Variant::GeneralDeepLinear { sizes, .. } => {
                let a = split_deep(state, sizes);
                chain_product(&a, 0, a.len())
            }
            Variant::PowerA111 { mu, .. } => Ok(Matrix::filled(1, 1, state[1] * power(state[0], *mu)?)),
            _ => unreachable!(),
        }
    }

    /// `dP/dt` for systems with a scalar product, by the product rule.
    pub fn dp_dt(&self, state: &[f64]) -> Result<Option<f64>> {
        let d = self.rhs(state)?;
        if self.chain_view().is_some() {
            return Ok(Some((0..state.len()).map(|i| product_except(state, i) * d[i]).sum()));
        }
        match &self.variant {
            Variant::ExpansiveA1N1 { c, .. } => {
                let n = c.len();
                Ok(Some((0..n).map(|i| d[i] * state[n + i] + state[i] * d[n + i]).sum()))
            }
            Variant::PowerA111 { mu, .. } => {
                let (a1, a2) = (state[0], state[1]);
                Ok(Some(d[1] * power(a1, *mu)? + a2 * mu * power(a1, mu - 1.0)? * d[0]))
            }
            _ => Ok(None),
        }
    }

    /// Excess quadratic error over its minimum,
    /// `½ tr((P - P*) Σ_II (P - P*)ᵗ)` with `P* = Σ_TI Σ_II⁻¹`.
    pub fn excess_error(&self, state: &[f64]) -> Result<f64> {
        let p = self.product(state)?;
        let (alpha, beta) = match &self.variant {
            Variant::PowerA111 { alpha, beta, .. } => (*alpha, *beta),
            _ => match self.chain_view() {
                Some((_, a, b)) => (a, b),
                None => match &self.variant {
                    Variant::ExpansiveA1N1 { alpha, beta, .. } => (*alpha, *beta),
                    _ => {
                        let (sii, sti) = self.moments().expect("matrix systems carry moments");
                        let d = p.sub(&sti.matmul(&sii.inverse()?)?)?;
                        return Ok(0.5 * d.matmul(sii)?.matmul(&d.transpose())?.trace()?);
                    }
                },
            },
        };
        let r = alpha - beta * p[(0, 0)];
        Ok(r * r / (2.0 * beta))
    }

    fn moments(&self) -> Option<(&Matrix, &Matrix)> {
        match &self.variant {
            Variant::CompressiveAN1N { sigma_ii, sigma_ti, .. }
            | Variant::GeneralThreeLayer { sigma_ii, sigma_ti, .. }
            | Variant::GeneralDeepLinear { sigma_ii, sigma_ti, .. } => Some((sigma_ii, sigma_ti)),
            _ => None,
        }
    }

    /// Quantities that stay constant along exact trajectories. Matrix
    /// invariants are flattened row-major. Empty when none is known.
    pub fn conserved_quantities(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let gradient = self.mode == ChannelMode::Gradient;
        if let Some((c, _, _)) = self.chain_view() {
            return Ok((0..state.len() - 1)
                .map(|i| {
                    if gradient {
                        state[i + 1] * state[i + 1] - state[i] * state[i]
                    } else {
                        c[i] * state[i + 1] - c[i + 1] * state[i] * state[i] / 2.0
                    }
                })
                .collect());
        }
        match &self.variant {
            Variant::ExpansiveA1N1 { c, .. } => {
                let n = c.len();
                let (a, b) = state.split_at(n);
                if gradient {
                    return Ok((0..n).map(|i| b[i] * b[i] - a[i] * a[i]).collect());
                }
                let mut out: Vec<f64> = (0..n).map(|i| b[i] - a[i] * a[i] / (2.0 * c[i])).collect();
                out.extend((1..n).map(|i| a[i] - c[i] / c[0] * a[0]));
                Ok(out)
            }
            Variant::CompressiveAN1N { c, .. } => {
                let n = c.len();
                let (a, b) = state.split_at(n);
                let a2: f64 = a.iter().map(|x| x * x).sum();
                if gradient {
                    Ok(vec![b.iter().map(|x| x * x).sum::<f64>() - a2])
                } else {
                    Ok(vec![c.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() - a2 / 2.0])
                }
            }
            Variant::GeneralThreeLayer { sizes: [n0, n1, n2], c1, .. } => {
                let (a1, a2) = split3(state, *n0, *n1, *n2);
                let aat = a1.matmul(&a1.transpose())?;
                let m = if gradient {
                    a2.transpose().matmul(&a2)?
                } else {
                    let ca = c1.matmul(&a2)?;
                    ca.add(&ca.transpose())?
                };
                Ok(m.sub(&aat)?.into_vec())
            }
            Variant::GeneralDeepLinear { sizes, c, deep_mode, .. } => {
                let a = split_deep(state, sizes);
                let mut out = Vec::new();
                if gradient {
                    for i in 0..a.len() - 1 {
                        let m = a[i + 1].transpose().matmul(&a[i + 1])?.sub(&a[i].matmul(&a[i].transpose())?)?;
                        out.extend(m.into_vec());
                    }
                } else if *deep_mode == DeepMode::Rbp {
                    for i in 0..a.len() - 1 {
                        let ca = c[i].matmul(&a[i + 1])?;
                        let m = ca.add(&ca.transpose())?.sub(&a[i].matmul(&a[i].transpose())?)?;
                        out.extend(m.into_vec());
                    }
                }
                Ok(out)
            }
            Variant::PowerA111 { mu, c1, with_fprime, .. } => {
                let (a1, a2) = (state[0], state[1]);
                Ok(match (with_fprime, gradient) {
                    (false, _) => Vec::new(),
                    (true, false) => vec![a2 - a1 * a1 / (2.0 * c1 * mu)],
                    (true, true) => vec![a2 * a2 - a1 * a1 / mu],
                })
            }
            _ => unreachable!(),
        }
    }
}

fn check_spd(m: &Matrix) -> Result<()> {
    if !m.is_symmetric(1e-12) {
        return Err(Error::InvalidArgument("Σ_II must be symmetric".into()));
    }
    m.cholesky().map(|_| ())
}

/// `x^mu`, rejecting negative bases for non-integer powers.
pub fn power(x: f64, mu: f64) -> Result<f64> {
    if mu.fract() == 0.0 && mu.abs() < i32::MAX as f64 {
        return Ok(x.powi(mu as i32));
    }
    if x < 0.0 {
        return Err(Error::Domain(format!("a1 = {x} < 0 with non-integer power {mu}")));
    }
    Ok(x.powf(mu))
}

pub(crate) fn split3(state: &[f64], n0: usize, n1: usize, n2: usize) -> (Matrix, Matrix) {
    let k = n1 * n0;
    (mat(n1, n0, &state[..k]), mat(n2, n1, &state[k..k + n2 * n1]))
}

pub(crate) fn split_deep(state: &[f64], sizes: &[usize]) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(sizes.len() - 1);
    let mut off = 0;
    for w in sizes.windows(2) {
        let (cols, rows) = (w[0], w[1]);
        out.push(mat(rows, cols, &state[off..off + rows * cols]));
        off += rows * cols;
    }
    out
}

/// `A_hi ⋯ A_{lo+1}` for 0-based slice `a[lo..hi]`; identity of the right
/// size when empty.
fn chain_product(a: &[Matrix], lo: usize, hi: usize) -> Result<Matrix> {
    if lo >= hi {
        let n = if lo < a.len() { a[lo].cols() } else { a[a.len() - 1].rows() };
        return Ok(Matrix::identity(n));
    }
    let mut p = a[lo].clone();
    for m in &a[lo + 1..hi] {
        p = m.matmul(&p)?;
    }
    Ok(p)
}
