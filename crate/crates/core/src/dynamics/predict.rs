//! Limits of the scalar systems predicted from their conserved couplings.
//!
//! Each coupling expresses every weight as a polynomial in `a1`, so the flow
//! collapses to `da1/dt = Q(a1)` and [`classify_1d`] decides the limit.

use serde::{Deserialize, Serialize};

use super::classify::{classify_1d, classify_on_roots, Classification, FixedPointReport};
use super::polynomial::{bisect, cubic_roots, Polynomial};
use crate::error::{Error, Result};

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")))
    }
}

/// `a1³ + (2 c1 a2(0) - a1(0)²) a1 - 2 c1 α/β = 0`, solved in closed form.
pub fn a111_cubic_roots(a1_0: f64, a2_0: f64, c1: f64, alpha: f64, beta: f64) -> Vec<f64> {
    cubic_roots(-2.0 * c1 * alpha / beta, 2.0 * c1 * a2_0 - a1_0 * a1_0, 0.0, 1.0)
}

/// Limit of the `A[1,1,1]` system from `(a1_0, a2_0)`.
pub fn predict_a111(a1_0: f64, a2_0: f64, c1: f64, alpha: f64, beta: f64) -> Result<FixedPointReport> {
    check_beta(beta)?;
    if c1 == 0.0 {
        // a1 is frozen; a2 relaxes linearly at rate β a1².
        if a1_0 == 0.0 {
            let mut rep = FixedPointReport::new(Classification::Stationary, vec![a1_0, a2_0]);
            rep.residual_at_limit = alpha.abs();
            rep.notes.push("c1 = 0 and a1 = 0: nothing moves".into());
            return Ok(rep);
        }
        let a2 = alpha / (beta * a1_0);
        let class = if a2 == a2_0 { Classification::Stationary } else { Classification::ConvergesTo { value: a1_0 } };
        let mut rep = FixedPointReport::new(class, vec![a1_0, a2]);
        rep.residual_at_limit = (alpha - beta * a1_0 * a2).abs();
        rep.notes.push("c1 = 0: a1 frozen, a2 = α/(β a1(0))".into());
        return Ok(rep);
    }
    let q = chain_polynomial(&[c1], alpha, beta, &[a1_0, a2_0])?;
    let mut rep = finish_chain(&q, &[c1], alpha, beta, &[a1_0, a2_0]);
    if let Classification::ConvergesTo { value } = rep.classification {
        let closed = a111_cubic_roots(a1_0, a2_0, c1, alpha, beta);
        let nearest = closed.iter().map(|r| (r - value).abs()).fold(f64::INFINITY, f64::min);
        if nearest > 1e-9 * value.abs().max(1.0) {
            rep.notes.push(format!("closed-form cubic roots {closed:?} disagree with {value}"));
        }
    }
    Ok(rep)
}

/// Whether a point on the critical hyperbola attracts nearby trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Attractor,
    Unstable,
    Marginal,
}

/// Sign of `β (c1 a2 + a1²)`, the decay rate of `α - βP` near the hyperbola.
pub fn stability_a111(a1: f64, a2: f64, c1: f64, beta: f64) -> Stability {
    let rate = beta * (c1 * a2 + a1 * a1);
    if rate.abs() <= 1e-12 * (beta.abs() * (c1 * a2).abs().max(a1 * a1)).max(f64::MIN_POSITIVE) {
        Stability::Marginal
    } else if rate > 0.0 {
        Stability::Attractor
    } else {
        Stability::Unstable
    }
}

/// `da1/dt` along the couplings of the scalar chain `a_1 … a_L`.
///
/// `c` holds `c_1 … c_{L-1}` (with `c_L = 1`); `state0` fixes the coupling
/// constants `K_i = a_{i+1}(0) - c_{i+1} a_i(0)² / (2 c_i)`.
pub fn chain_polynomial(c: &[f64], alpha: f64, beta: f64, state0: &[f64]) -> Result<Polynomial> {
    check_beta(beta)?;
    if state0.len() != c.len() + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} feedback weights need {} forward weights, got {}",
            c.len(),
            c.len() + 1,
            state0.len()
        )));
    }
    if let Some(i) = c.iter().position(|&x| x == 0.0) {
        return Err(Error::Domain(format!(
            "c_{} = 0 freezes a_{}; analyse the sub-chain above it instead",
            i + 1,
            i + 1
        )));
    }
    let mut full = c.to_vec();
    full.push(1.0);
    let mut layer = Polynomial::x();
    let mut product = layer.clone();
    for i in 0..c.len() {
        let k = state0[i + 1] - full[i + 1] * state0[i] * state0[i] / (2.0 * full[i]);
        layer = layer.mul(&layer).scale(full[i + 1] / (2.0 * full[i])).add(&Polynomial::constant(k));
        product = product.mul(&layer);
    }
    Ok(Polynomial::constant(alpha).sub(&product.scale(beta)).scale(c[0]))
}

/// Every weight of the chain as a function of `a1`, via the couplings.
fn chain_from_a1(c: &[f64], state0: &[f64], a1: f64) -> Vec<f64> {
    let mut full = c.to_vec();
    full.push(1.0);
    let mut out = vec![a1];
    for i in 0..c.len() {
        let k = state0[i + 1] - full[i + 1] * state0[i] * state0[i] / (2.0 * full[i]);
        let prev = out[i];
        out.push(full[i + 1] / (2.0 * full[i]) * prev * prev + k);
    }
    out
}

fn finish_chain(q: &Polynomial, c: &[f64], alpha: f64, beta: f64, state0: &[f64]) -> FixedPointReport {
    let mut rep = classify_1d(q, state0[0]);
    match rep.classification {
        Classification::Stationary => {
            // a1 does not move, so neither does anything coupled to it.
            rep.predicted_limit = state0.to_vec();
            rep.residual_at_limit = (alpha - beta * state0.iter().product::<f64>()).abs();
        }
        Classification::ConvergesTo { value } => {
            let limit = chain_from_a1(c, state0, value);
            rep.residual_at_limit = (alpha - beta * limit.iter().product::<f64>()).abs();
            rep.predicted_limit = limit;
        }
        _ => {}
    }
    rep
}

/// Limit of the scalar chain `a_1 … a_L` with feedback `c_1 … c_{L-1}`.
pub fn predict_chain(state0: &[f64], c: &[f64], alpha: f64, beta: f64) -> Result<FixedPointReport> {
    let q = chain_polynomial(c, alpha, beta, state0)?;
    Ok(finish_chain(&q, c, alpha, beta, state0))
}

/// Limit of the `A[1,1,1,1]` system. A zero feedback weight freezes one
/// weight and leaves an `A[1,1,1]` system in the other two.
pub fn predict_a1111(state0: &[f64], c1: f64, c2: f64, alpha: f64, beta: f64) -> Result<FixedPointReport> {
    check_beta(beta)?;
    if state0.len() != 3 {
        return Err(Error::InvalidArgument("A[1,1,1,1] has three weights".into()));
    }
    let [a1, a2, a3] = [state0[0], state0[1], state0[2]];
    if c1 == 0.0 {
        // (a2, a3) follow A[1,1,1] with c' = c2, α' = a1 α, β' = a1² β.
        if a1 == 0.0 {
            return Ok(frozen(state0, alpha, "c1 = 0 and a1 = 0: nothing moves"));
        }
        let inner = predict_a111(a2, a3, c2, a1 * alpha, a1 * a1 * beta)?;
        return Ok(lift(inner, |l| vec![a1, l[0], l[1]], state0, alpha, beta, "c1 = 0: a1 frozen, reduced to A[1,1,1]"));
    }
    if c2 == 0.0 {
        // a2 frozen; (a1, a3) follow A[1,1,1] with c' = c1/a2, α' = a2 α, β' = a2² β.
        if a2 == 0.0 {
            let mut rep = FixedPointReport::new(Classification::DivergesPlusFiniteTime, Vec::new());
            if c1 * alpha < 0.0 {
                rep.classification = Classification::DivergesMinusFiniteTime;
            } else if alpha == 0.0 {
                rep = frozen(state0, alpha, "");
            }
            rep.notes.push("c2 = 0 and a2 = 0: a1 drifts linearly, no fixed point".into());
            return Ok(rep);
        }
        let inner = predict_a111(a1, a3, c1 / a2, a2 * alpha, a2 * a2 * beta)?;
        return Ok(lift(inner, |l| vec![l[0], a2, l[1]], state0, alpha, beta, "c2 = 0: a2 frozen, reduced to A[1,1,1]"));
    }
    predict_chain(state0, &[c1, c2], alpha, beta)
}

fn frozen(state0: &[f64], alpha: f64, note: &str) -> FixedPointReport {
    let mut rep = FixedPointReport::new(Classification::Stationary, state0.to_vec());
    rep.residual_at_limit = alpha.abs();
    if !note.is_empty() {
        rep.notes.push(note.into());
    }
    rep
}

fn lift(
    inner: FixedPointReport,
    embed: impl Fn(&[f64]) -> Vec<f64>,
    state0: &[f64],
    alpha: f64,
    beta: f64,
    note: &str,
) -> FixedPointReport {
    let mut rep = inner;
    if !rep.predicted_limit.is_empty() {
        rep.predicted_limit = embed(&rep.predicted_limit);
        rep.residual_at_limit = (alpha - beta * rep.predicted_limit.iter().product::<f64>()).abs();
        if let Classification::ConvergesTo { .. } = rep.classification {
            rep.classification = Classification::ConvergesTo { value: rep.predicted_limit[0] };
        }
    }
    if rep.classification == Classification::Stationary && rep.predicted_limit.is_empty() {
        rep.predicted_limit = state0.to_vec();
    }
    rep.notes.push(note.into());
    rep
}

/// Limit of the `A[1,N,1]` system; `state0` is `a_1..a_N, b_1..b_N`.
pub fn predict_a1n1(state0: &[f64], c: &[f64], alpha: f64, beta: f64) -> Result<FixedPointReport> {
    check_beta(beta)?;
    let n = c.len();
    if n == 0 || state0.len() != 2 * n {
        return Err(Error::InvalidArgument(format!("A[1,N,1] with N={n} needs {} state entries", 2 * n)));
    }
    if let Some(i) = c.iter().position(|&x| x == 0.0) {
        return Err(Error::Domain(format!("c_{} = 0 freezes a_{}; remove that unit first", i + 1, i + 1)));
    }
    let (a0, b0) = state0.split_at(n);
    let a_of = |i: usize| Polynomial::new(vec![a0[i] - c[i] / c[0] * a0[0], c[i] / c[0]]);
    let kb = |i: usize| b0[i] - a0[i] * a0[i] / (2.0 * c[i]);
    let mut p = Polynomial::constant(0.0);
    for i in 0..n {
        let ai = a_of(i);
        let bi = ai.mul(&ai).scale(1.0 / (2.0 * c[i])).add(&Polynomial::constant(kb(i)));
        p = p.add(&ai.mul(&bi));
    }
    let q = Polynomial::constant(alpha).sub(&p.scale(beta)).scale(c[0]);
    let mut rep = classify_1d(&q, a0[0]);
    let limit_from = |a1: f64| -> Vec<f64> {
        let a: Vec<f64> = (0..n).map(|i| a_of(i).eval(a1)).collect();
        let b: Vec<f64> = (0..n).map(|i| a[i] * a[i] / (2.0 * c[i]) + kb(i)).collect();
        a.into_iter().chain(b).collect()
    };
    let limit = match rep.classification {
        Classification::Stationary => Some(state0.to_vec()),
        Classification::ConvergesTo { value } => Some(limit_from(value)),
        _ => None,
    };
    if let Some(l) = limit {
        let p: f64 = (0..n).map(|i| l[i] * l[n + i]).sum();
        rep.residual_at_limit = (alpha - beta * p).abs();
        rep.predicted_limit = l;
    }
    Ok(rep)
}

/// Limit of the `A[N,1,N]` autoencoder on whitened data.
///
/// With `K = C·B0 - ‖A0‖²/2`, the scale `β` is the unique positive root of
/// `1 - K t - ½‖C‖² t³`; then `A → βC` and `B → Cᵗ/(β‖C‖²)`.
pub fn predict_autoencoder_n1n(a0: &[f64], b0: &[f64], c: &[f64]) -> Result<FixedPointReport> {
    let n = c.len();
    if a0.len() != n || b0.len() != n {
        return Err(Error::InvalidArgument("A0, B0 and C must have the same length".into()));
    }
    let cc: f64 = c.iter().map(|x| x * x).sum();
    if cc == 0.0 {
        return Err(Error::Domain("C = 0: A never moves".into()));
    }
    let k = dot(c, b0) - 0.5 * dot(a0, a0);
    let cubic = Polynomial::new(vec![1.0, -k, 0.0, -0.5 * cc]);
    let positive: Vec<f64> = cubic.real_roots().into_iter().filter(|&r| r > 0.0).collect();
    assert_eq!(positive.len(), 1, "the scale cubic has exactly one positive root");
    let scale = positive[0];
    let a: Vec<f64> = c.iter().map(|x| scale * x).collect();
    let b: Vec<f64> = c.iter().map(|x| x / (scale * cc)).collect();
    let start_residual = autoencoder_residual(a0, b0, c);
    let class = if start_residual < 1e-12 {
        Classification::Stationary
    } else {
        Classification::ConvergesTo { value: scale }
    };
    let mut rep = FixedPointReport::new(class, a.iter().chain(&b).copied().collect());
    if class == Classification::Stationary {
        rep.predicted_limit = a0.iter().chain(b0).copied().collect();
    }
    rep.residual_at_limit = autoencoder_residual(&rep.predicted_limit[..n], &rep.predicted_limit[n..], c);
    rep.polynomial_used = Some(cubic);
    rep.notes.push(format!("scale root β = {scale}"));
    Ok(rep)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest entry of `C(Id - BA)` and `(Id - BA)Aᵗ`.
fn autoencoder_residual(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let n = c.len();
    let mut worst: f64 = 0.0;
    // (Id - BA)_{ij} = δ_ij - b_i a_j
    let m = |i: usize, j: usize| f64::from(u8::from(i == j)) - b[i] * a[j];
    for j in 0..n {
        let ca: f64 = (0..n).map(|i| c[i] * m(i, j)).sum();
        let ma: f64 = (0..n).map(|k| m(j, k) * a[k]).sum();
        worst = worst.max(ca.abs()).max(ma.abs());
    }
    worst
}

/// Limit of the power-unit `A[1,1,1]` system with the derivative included.
///
/// Requires `α, β, c1 > 0`, `μ ≥ 1` and non-negative initial weights. The
/// flow `da1/dt = μ c1 a1^{μ-1} g(a1)` with
/// `g(t) = α - β (t²/(2 c1 μ) + K) t^μ` converges to a positive root of `g`.
pub fn predict_power_a111(state0: &[f64], mu: f64, c1: f64, alpha: f64, beta: f64) -> Result<FixedPointReport> {
    if state0.len() != 2 {
        return Err(Error::InvalidArgument("power A[1,1,1] has two weights".into()));
    }
    let (a1, a2) = (state0[0], state0[1]);
    if !(alpha > 0.0 && beta > 0.0 && c1 > 0.0 && mu >= 1.0 && a1 >= 0.0 && a2 >= 0.0) {
        return Err(Error::Domain(format!(
            "convergence is only guaranteed for α, β, c1 > 0, μ ≥ 1 and a(0) ≥ 0 (got α={alpha}, β={beta}, c1={c1}, μ={mu}, a(0)=({a1}, {a2}))"
        )));
    }
    if mu == 1.0 {
        return predict_a111(a1, a2, c1, alpha, beta);
    }
    let k = a2 - a1 * a1 / (2.0 * c1 * mu);
    if a1 == 0.0 {
        let mut rep = FixedPointReport::new(Classification::Stationary, state0.to_vec());
        rep.residual_at_limit = alpha;
        rep.notes.push("a1 = 0 is a fixed point of the power flow for μ > 1".into());
        return Ok(rep);
    }
    let g = |t: f64| alpha - beta * (t * t / (2.0 * c1 * mu) + k) * t.powf(mu);
    let roots = power_roots(&g, mu, c1, alpha, beta, k);
    // The prefactor μ c1 a1^{μ-1} is positive on (0, ∞), so the flow has the sign of g.
    let tagged: Vec<(f64, bool)> = roots.iter().map(|&r| (r, false)).collect();
    let n = tagged.len();
    let sign = |i: usize| {
        if i == 0 {
            1.0
        } else if i == n {
            -1.0
        } else {
            g(0.5 * (tagged[i - 1].0 + tagged[i].0)).signum()
        }
    };
    let (class, _) = classify_on_roots(&tagged, a1, sign);
    let limit = match class {
        Classification::Stationary => state0.to_vec(),
        Classification::ConvergesTo { value } => vec![value, value * value / (2.0 * c1 * mu) + k],
        _ => unreachable!("g > 0 near 0 and g < 0 for large t"),
    };
    let mut rep = FixedPointReport::new(class, limit);
    rep.residual_at_limit = (alpha - beta * rep.predicted_limit[1] * rep.predicted_limit[0].powf(mu)).abs();
    if mu.fract() == 0.0 {
        // Q(t) = μ c1 t^{μ-1} g(t) as a polynomial.
        let m = mu as usize;
        let mut tm = vec![0.0; m + 1];
        tm[m] = 1.0;
        let inner = Polynomial::new(vec![k, 0.0, 1.0 / (2.0 * c1 * mu)]);
        let gpoly = Polynomial::constant(alpha).sub(&inner.mul(&Polynomial::new(tm)).scale(beta));
        let mut pre = vec![0.0; m];
        pre[m - 1] = mu * c1;
        rep.polynomial_used = Some(Polynomial::new(pre).mul(&gpoly));
    }
    Ok(rep)
}

/// Positive roots of `g`, which is positive near 0 and negative for large `t`.
fn power_roots(g: &impl Fn(f64) -> f64, mu: f64, c1: f64, alpha: f64, beta: f64, k: f64) -> Vec<f64> {
    // For t ≥ max(1, bound), t²/(2 c1 μ) > |K| + α/β, so g(t) < 0.
    let bound = 1.01 * (2.0 * c1 * mu * (k.abs() + alpha / beta)).sqrt().max(1.0) + 1e-9;
    let n = 20_000;
    let mut roots = Vec::new();
    let mut prev_t = 0.0;
    let mut prev = alpha;
    for i in 1..=n {
        let t = bound * i as f64 / n as f64;
        let v = g(t);
        if v == 0.0 {
            roots.push(t);
        } else if prev != 0.0 && v.signum() != prev.signum() {
            roots.push(bisect(g, prev_t, t));
        }
        prev_t = t;
        prev = v;
    }
    roots
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoFprimeVerdict {
    /// Fixed points exist only when `α/β = γ/δ`.
    pub feasible: bool,
    pub alpha_over_beta: f64,
    pub gamma_over_delta: f64,
}

/// Whether the derivative-free power system can have fixed points at all.
pub fn check_power_nofprime(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<NoFprimeVerdict> {
    if beta == 0.0 || delta == 0.0 {
        return Err(Error::Domain("β and δ must be nonzero".into()));
    }
    let (x, y) = (alpha / beta, gamma / delta);
    Ok(NoFprimeVerdict {
        feasible: (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0),
        alpha_over_beta: x,
        gamma_over_delta: y,
    })
}
