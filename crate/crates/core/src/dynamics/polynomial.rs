//! Real polynomials in one variable and their real roots.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Coefficients in ascending degree, trailing zeros trimmed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    coefficients: Vec<f64>,
}

impl Polynomial {
    pub fn new(mut coefficients: Vec<f64>) -> Self {
        while coefficients.len() > 1 && *coefficients.last().unwrap() == 0.0 {
            coefficients.pop();
        }
        if coefficients.is_empty() {
            coefficients.push(0.0);
        }
        Polynomial { coefficients }
    }

    pub fn constant(c: f64) -> Self {
        Polynomial::new(vec![c])
    }

    /// The identity polynomial `x`.
    pub fn x() -> Self {
        Polynomial::new(vec![0.0, 1.0])
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients == [0.0]
    }

    pub fn leading(&self) -> f64 {
        *self.coefficients.last().unwrap()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// `Σ |k_i| |x|^i`, the scale against which a value at `x` is small.
    pub fn magnitude(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * x.abs() + c.abs())
    }

    pub fn derivative(&self) -> Self {
        if self.degree() == 0 {
            return Polynomial::constant(0.0);
        }
        Polynomial::new(
            self.coefficients
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, &c)| i as f64 * c)
                .collect(),
        )
    }

    pub fn add(&self, other: &Polynomial) -> Self {
        let n = self.coefficients.len().max(other.coefficients.len());
        let get = |p: &Polynomial, i: usize| p.coefficients.get(i).copied().unwrap_or(0.0);
        Polynomial::new((0..n).map(|i| get(self, i) + get(other, i)).collect())
    }

    pub fn sub(&self, other: &Polynomial) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Self {
        Polynomial::new(self.coefficients.iter().map(|c| c * s).collect())
    }

    pub fn mul(&self, other: &Polynomial) -> Self {
        let mut out = vec![0.0; self.coefficients.len() + other.coefficients.len() - 1];
        for (i, a) in self.coefficients.iter().enumerate() {
            for (j, b) in other.coefficients.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Polynomial::new(out)
    }

    /// `self(inner(x))`.
    pub fn compose(&self, inner: &Polynomial) -> Self {
        self.coefficients
            .iter()
            .rev()
            .fold(Polynomial::constant(0.0), |acc, &c| acc.mul(inner).add(&Polynomial::constant(c)))
    }

    /// Every real root lies in `[-bound, bound]`.
    pub fn cauchy_bound(&self) -> f64 {
        let lead = self.leading();
        1.0 + self.coefficients[..self.degree()]
            .iter()
            .map(|c| (c / lead).abs())
            .fold(0.0, f64::max)
    }

    /// Distinct real roots in ascending order.
    ///
    /// The critical points (roots of the derivative, found recursively) cut
    /// the real line into intervals on which the polynomial is monotone; each
    /// sign change is refined by bisection to full precision. Critical points
    /// where the value vanishes within rounding are reported as (multiple)
    /// roots.
    pub fn real_roots(&self) -> Vec<f64> {
        self.real_roots_with_multiplicity().into_iter().map(|(r, _)| r).collect()
    }

    /// Like [`real_roots`](Self::real_roots), flagging roots that are also
    /// critical points (even or higher multiplicity).
    pub fn real_roots_with_multiplicity(&self) -> Vec<(f64, bool)> {
        match self.degree() {
            0 => return Vec::new(),
            1 => return vec![(-self.coefficients[0] / self.coefficients[1], false)],
            _ => {}
        }
        let bound = self.cauchy_bound();
        let critical: Vec<f64> = self
            .derivative()
            .real_roots()
            .into_iter()
            .filter(|c| c.abs() <= bound)
            .collect();
        let mut roots: Vec<(f64, bool)> = Vec::new();
        let mut knots = vec![-bound];
        knots.extend(&critical);
        knots.push(bound);
        for &c in &critical {
            if self.eval(c).abs() <= 1e-12 * self.magnitude(c).max(f64::MIN_POSITIVE) {
                roots.push((c, true));
            }
        }
        for w in knots.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let (flo, fhi) = (self.eval(lo), self.eval(hi));
            if flo == 0.0 || fhi == 0.0 {
                for (x, fx) in [(lo, flo), (hi, fhi)] {
                    if fx == 0.0 && !roots.iter().any(|&(r, _)| r == x) {
                        roots.push((x, critical.contains(&x)));
                    }
                }
                continue;
            }
            if flo.signum() != fhi.signum() {
                let r = bisect(|x| self.eval(x), lo, hi);
                if !roots.iter().any(|&(q, _)| close(q, r)) {
                    roots.push((r, false));
                }
            }
        }
        roots.sort_by(|a, b| a.0.total_cmp(&b.0));
        roots.dedup_by(|a, b| {
            if close(a.0, b.0) {
                b.1 |= a.1;
                true
            } else {
                false
            }
        });
        roots
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Bisection on a bracketing interval until the midpoint stops moving.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, &c) in self.coefficients.iter().enumerate().rev() {
            if c == 0.0 && !(self.degree() == 0) {
                continue;
            }
            if !first {
                write!(f, " {} ", if c < 0.0 { '-' } else { '+' })?;
            } else if c < 0.0 {
                write!(f, "-")?;
            }
            first = false;
            match i {
                0 => write!(f, "{}", c.abs())?,
                1 => write!(f, "{}x", c.abs())?,
                _ => write!(f, "{}x^{i}", c.abs())?,
            }
        }
        Ok(())
    }
}

/// Real roots of `k0 + k1 x + k2 x² + k3 x³` (`k3 ≠ 0`) by Cardano's formula
/// or the trigonometric form, each polished by two Newton steps. Ascending,
/// distinct up to rounding.
pub fn cubic_roots(k0: f64, k1: f64, k2: f64, k3: f64) -> Vec<f64> {
    assert!(k3 != 0.0, "cubic_roots needs a cubic term");
    let (a, b, c) = (k2 / k3, k1 / k3, k0 / k3);
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let shift = -a / 3.0;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let mut roots = if p == 0.0 && q == 0.0 {
        vec![shift]
    } else if disc > 0.0 {
        let s = disc.sqrt();
        vec![(-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt() + shift]
    } else {
        let m = 2.0 * (-p / 3.0).sqrt();
        let theta = ((3.0 * q / (p * m)).clamp(-1.0, 1.0)).acos() / 3.0;
        (0..3)
            .map(|k| m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift)
            .collect()
    };
    let f = |x: f64| ((x + a) * x + b) * x + c;
    let df = |x: f64| (3.0 * x + 2.0 * a) * x + b;
    for r in roots.iter_mut() {
        for _ in 0..2 {
            let d = df(*r);
            if d != 0.0 {
                *r -= f(*r) / d;
            }
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|x, y| close(*x, *y));
    roots
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let p = Polynomial::new(vec![1.0, 2.0, 0.0, 0.0]);
        assert_eq!(p.degree(), 1);
        let q = p.mul(&p);
        assert_eq!(q.coefficients(), &[1.0, 4.0, 4.0]);
        assert_eq!(q.derivative().coefficients(), &[4.0, 8.0]);
        assert_eq!(q.eval(2.0), 25.0);
        let c = q.compose(&Polynomial::new(vec![0.0, 0.0, 1.0]));
        assert_eq!(c.eval(3.0), q.eval(9.0));
    }

    #[test]
    fn roots_of_known_polynomials() {
        let p = Polynomial::new(vec![0.0, 1.0, 0.0, -1.0]);
        let r = p.real_roots();
        assert_eq!(r.len(), 3);
        for (x, e) in r.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((x - e).abs() < 1e-14);
        }
        assert!(Polynomial::new(vec![1.0, 0.0, 1.0]).real_roots().is_empty());
        let double = Polynomial::new(vec![1.0, -2.0, 1.0]).real_roots_with_multiplicity();
        assert_eq!(double.len(), 1);
        assert!((double[0].0 - 1.0).abs() < 1e-9 && double[0].1);
    }

    #[test]
    fn cubic_matches_generic_roots() {
        for (k0, k1, k2, k3) in [(-2.0, 0.0, 0.0, 1.0), (-2.0, -4.0, 0.0, 1.0), (1.0, 0.0, 0.0, -0.5), (0.3, -1.1, 0.2, 2.0)] {
            let closed = cubic_roots(k0, k1, k2, k3);
            let generic = Polynomial::new(vec![k0, k1, k2, k3]).real_roots();
            assert_eq!(closed.len(), generic.len());
            for (a, b) in closed.iter().zip(&generic) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn display() {
        assert_eq!(Polynomial::new(vec![1.0, 0.0, -2.0]).to_string(), "-2x^2 + 1");
    }
}
