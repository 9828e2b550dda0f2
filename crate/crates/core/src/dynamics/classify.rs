//! Limit behavior of one-dimensional polynomial flows `dx/dt = Q(x)`.

use serde::{Deserialize, Serialize};

use super::polynomial::Polynomial;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Classification {
    ConvergesTo { value: f64 },
    DivergesPlusFiniteTime,
    DivergesMinusFiniteTime,
    Stationary,
}

impl Classification {
    pub fn converges(&self) -> bool {
        matches!(self, Classification::ConvergesTo { .. } | Classification::Stationary)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub classification: Classification,
    /// Full parameter vector at the limit (empty on divergence).
    pub predicted_limit: Vec<f64>,
    pub polynomial_used: Option<Polynomial>,
    /// Residual of the defining critical equation at the limit.
    pub residual_at_limit: f64,
    /// The selected root is a multiple root of the flow polynomial, so the
    /// limit is only reached from one side.
    pub marginal: bool,
    /// Divergence happens in finite time (degree > 1). Degree-one flows
    /// diverge exponentially instead.
    pub finite_time: bool,
    pub notes: Vec<String>,
}

impl FixedPointReport {
    pub(crate) fn new(classification: Classification, limit: Vec<f64>) -> Self {
        FixedPointReport {
            classification,
            predicted_limit: limit,
            polynomial_used: None,
            residual_at_limit: 0.0,
            marginal: false,
            finite_time: false,
            notes: Vec::new(),
        }
    }
}

fn same_root(x0: f64, r: f64) -> bool {
    (x0 - r).abs() <= 1e-12 * r.abs().max(1.0)
}

/// Where a 1-D flow started at `x0` ends up, given the distinct real roots of
/// its right-hand side and the sign of the right-hand side on each open
/// interval between them.
pub fn classify_on_roots(roots: &[(f64, bool)], x0: f64, sign_between: impl Fn(usize) -> f64) -> (Classification, Option<usize>) {
    if let Some(i) = roots.iter().position(|&(r, _)| same_root(x0, r)) {
        return (Classification::Stationary, Some(i));
    }
    // Interval i is (r_{i-1}, r_i), with r_{-1} = -inf and r_k = +inf.
    let interval = roots.iter().take_while(|&&(r, _)| r < x0).count();
    let s = sign_between(interval);
    if s > 0.0 {
        match roots.get(interval) {
            Some(&(r, _)) => (Classification::ConvergesTo { value: r }, Some(interval)),
            None => (Classification::DivergesPlusFiniteTime, None),
        }
    } else if interval == 0 {
        (Classification::DivergesMinusFiniteTime, None)
    } else {
        (Classification::ConvergesTo { value: roots[interval - 1].0 }, Some(interval - 1))
    }
}

/// Limit of `dx/dt = q(x)` from `x0` by the ordering of the real roots of
/// `q` and the sign of `q` between them.
pub fn classify_1d(q: &Polynomial, x0: f64) -> FixedPointReport {
    if q.is_zero() {
        let mut rep = FixedPointReport::new(Classification::Stationary, vec![x0]);
        rep.polynomial_used = Some(q.clone());
        return rep;
    }
    let roots = q.real_roots_with_multiplicity();
    let n = roots.len();
    let lead = q.leading();
    let odd = q.degree() % 2 == 1;
    let sign_between = |i: usize| -> f64 {
        if i == n {
            lead.signum()
        } else if i == 0 {
            if odd {
                -lead.signum()
            } else {
                lead.signum()
            }
        } else {
            q.eval(0.5 * (roots[i - 1].0 + roots[i].0)).signum()
        }
    };
    let (classification, idx) = classify_on_roots(&roots, x0, sign_between);
    let mut rep = FixedPointReport::new(classification, Vec::new());
    match classification {
        Classification::Stationary => rep.predicted_limit = vec![x0],
        Classification::ConvergesTo { value } => {
            rep.predicted_limit = vec![value];
            rep.residual_at_limit = q.eval(value).abs();
        }
        _ => rep.finite_time = q.degree() > 1,
    }
    rep.marginal = idx.is_some_and(|i| roots[i].1);
    rep.polynomial_used = Some(q.clone());
    rep
}
