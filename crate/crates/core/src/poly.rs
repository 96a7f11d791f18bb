//! Dense real polynomials in one variable, lowest coefficient first.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn zero() -> Poly {
        Poly(Vec::new())
    }

    pub fn constant(c: f64) -> Poly {
        Poly(vec![c]).trimmed()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    /// Degree of the trimmed polynomial; the zero polynomial reports 0.
    pub fn degree(&self) -> usize {
        self.0.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0.0)
    }

    /// Drops exactly-zero leading coefficients.
    pub fn trimmed(mut self) -> Poly {
        while self.0.last() == Some(&0.0) {
            self.0.pop();
        }
        self
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Poly {
        Poly(self.0.iter().enumerate().skip(1).map(|(k, &c)| k as f64 * c).collect())
    }

    /// `j`-th derivative at `x`.
    pub fn derivative_at(&self, j: usize, x: f64) -> f64 {
        let mut p = self.clone();
        for _ in 0..j {
            p = p.derivative();
        }
        p.eval(x)
    }

    /// Antiderivative vanishing at 0.
    pub fn integral(&self) -> Poly {
        let mut out = Vec::with_capacity(self.0.len() + 1);
        out.push(0.0);
        out.extend(self.0.iter().enumerate().map(|(k, &c)| c / (k + 1) as f64));
        Poly(out).trimmed()
    }

    /// `q(x) = p(x + shift)`.
    pub fn shifted(&self, shift: f64) -> Poly {
        // Horner in polynomial arithmetic: q = (...(c_n (x+h) + c_{n-1})(x+h) ...).
        let mut q: Vec<f64> = Vec::new();
        for &c in self.0.iter().rev() {
            let mut next = vec![0.0; q.len() + 1];
            for (k, &qk) in q.iter().enumerate() {
                next[k + 1] += qk;
                next[k] += qk * shift;
            }
            next[0] += c;
            q = next;
        }
        Poly(q).trimmed()
    }

    pub fn scaled(&self, s: f64) -> Poly {
        Poly(self.0.iter().map(|c| c * s).collect()).trimmed()
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.0.len().max(other.0.len());
        Poly((0..n).map(|k| self.0.get(k).unwrap_or(&0.0) + other.0.get(k).unwrap_or(&0.0)).collect()).trimmed()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calculus_round_trip() {
        let p = Poly(vec![1.0, -2.0, 0.5, 3.0]);
        assert_eq!(p.integral().derivative(), p);
        assert_eq!(p.eval(2.0), 1.0 - 4.0 + 2.0 + 24.0);
        assert_eq!(p.derivative_at(2, 1.0), 1.0 + 18.0);
        assert_eq!(p.degree(), 3);
        assert_eq!(Poly::zero().degree(), 0);
    }

    #[test]
    fn shift_matches_direct_evaluation() {
        let p = Poly(vec![0.3, 1.0, -2.0, 0.25, 1.5]);
        let q = p.shifted(-1.25);
        for i in 0..10 {
            let x = -2.0 + 0.4 * i as f64;
            assert!((q.eval(x) - p.eval(x - 1.25)).abs() < 1e-12);
        }
    }
}
