//! Exact method of steps for the scalar test equations
//!
//! ```text
//! retarded:  x'(t) = b x(t - tau)
//! neutral:   x'(t) = a x'(t - tau) + b x(t - tau)
//! ```
//!
//! with a polynomial history on `[-tau, 0]`. Every step interval
//! `(k tau, (k + 1) tau]` carries an exact polynomial in the local variable
//! `s = t - k tau`, so derivative jumps at the breaking points `k tau` are
//! measured without integrator error.

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::poly::Poly;

pub const DEFAULT_MAX_DEGREE: usize = 16;
/// Derivative jumps below this (relative to the derivative scale) count as continuous.
pub const JUMP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NddeError {
    #[error("invalid delay problem: {0}")]
    InvalidProblem(String),
    #[error("step {step} needs degree {degree}, above the limit {max}")]
    DegreeOverflow { step: usize, degree: usize, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DelayKind {
    Retarded,
    Neutral,
}

fn default_max_degree() -> usize {
    DEFAULT_MAX_DEGREE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayProblem {
    pub kind: DelayKind,
    /// Coefficient of `x'(t - tau)`; ignored for retarded problems.
    #[serde(default)]
    pub a: f64,
    /// Coefficient of `x(t - tau)`.
    pub b: f64,
    pub delay: f64,
    /// History coefficients in absolute time `t` on `[-tau, 0]`.
    pub history: Poly,
    pub horizon: f64,
    #[serde(default = "default_max_degree")]
    pub max_degree: usize,
}

impl DelayProblem {
    fn neutral_coefficient(&self) -> f64 {
        match self.kind {
            DelayKind::Retarded => 0.0,
            DelayKind::Neutral => self.a,
        }
    }

    /// Number of delay steps up to the horizon.
    pub fn steps(&self) -> Result<usize, NddeError> {
        let bad = |m: String| Err(NddeError::InvalidProblem(m));
        if !(self.delay > 0.0 && self.delay.is_finite()) {
            return bad(format!("delay must be positive, got {}", self.delay));
        }
        if !(self.a.is_finite() && self.b.is_finite() && self.history.0.iter().all(|c| c.is_finite())) {
            return bad("coefficients must be finite".into());
        }
        if self.history.degree() > self.max_degree {
            return Err(NddeError::DegreeOverflow { step: 0, degree: self.history.degree(), max: self.max_degree });
        }
        let ratio = self.horizon / self.delay;
        let steps = ratio.round();
        if !(steps >= 1.0 && (ratio - steps).abs() <= 1e-9 * steps) {
            return bad(format!("horizon {} is not a positive multiple of the delay {}", self.horizon, self.delay));
        }
        Ok(steps as usize)
    }
}

/// `C^k` class at a breaking point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothness {
    /// Derivatives up to order `k` are continuous, order `k + 1` jumps.
    C(usize),
    /// No derivative jumps.
    Infinite,
}

impl Serialize for Smoothness {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Smoothness::C(k) => s.serialize_u64(*k as u64),
            Smoothness::Infinite => s.serialize_str("infinite"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakingPointLedger {
    pub times: Vec<f64>,
    /// `x'(t+) - x'(t-)`.
    pub jump_in_derivative: Vec<f64>,
    pub smoothness_order: Vec<Smoothness>,
    /// Jump of the lowest discontinuous derivative (0 when smooth).
    pub lowest_jump: Vec<f64>,
}

/// Piecewise-polynomial solution; `pieces[k]` lives on `(k tau, (k+1) tau]`
/// in the local variable `s = t - k tau`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelaySolution {
    pub delay: f64,
    /// History in the local variable `s = t + tau`.
    pub history: Poly,
    pub pieces: Vec<Poly>,
}

impl DelaySolution {
    pub fn horizon(&self) -> f64 {
        self.delay * self.pieces.len() as f64
    }

    /// Piece and local variable for `t` under the `(k tau, (k+1) tau]` convention.
    fn locate(&self, t: f64) -> (&Poly, f64) {
        if t <= 0.0 {
            return (&self.history, t + self.delay);
        }
        let k = ((t / self.delay).ceil() as usize).clamp(1, self.pieces.len()) - 1;
        (&self.pieces[k], t - k as f64 * self.delay)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let (p, s) = self.locate(t);
        p.eval(s)
    }

    /// `j`-th derivative, left limit at breaking points.
    pub fn derivative(&self, j: usize, t: f64) -> f64 {
        let (p, s) = self.locate(t);
        p.derivative_at(j, s)
    }

    /// `x'(t) - a x'(t - tau) - b x(t - tau)` at a non-breaking point `t > 0`.
    pub fn residual(&self, a: f64, b: f64, t: f64) -> f64 {
        self.derivative(1, t) - a * self.derivative(1, t - self.delay) - b * self.eval(t - self.delay)
    }
}

fn step(prev: &Poly, a: f64, b: f64, tau: f64) -> Poly {
    let start = Poly::constant(prev.eval(tau));
    let neutral = prev.add(&Poly::constant(-prev.eval(0.0))).scaled(a);
    let retarded = prev.integral().scaled(b);
    start.add(&neutral).add(&retarded)
}

fn classify(left: &Poly, right: &Poly, tau: f64) -> (f64, Smoothness, f64) {
    let top = left.degree().max(right.degree()) + 1;
    let d1 = right.derivative_at(1, 0.0) - left.derivative_at(1, tau);
    for j in 1..=top {
        let l = left.derivative_at(j, tau);
        let r = right.derivative_at(j, 0.0);
        let jump = r - l;
        if jump.abs() > JUMP_TOLERANCE * (1.0 + l.abs().max(r.abs())) {
            return (d1, Smoothness::C(j - 1), jump);
        }
    }
    (d1, Smoothness::Infinite, 0.0)
}

/// Integrates step by step and records the breaking points `0, tau, ..., T`.
///
/// One step beyond the horizon is computed so the breaking point at `T`
/// itself can be classified; it is not part of the returned solution.
pub fn solve_steps(p: &DelayProblem) -> Result<(DelaySolution, BreakingPointLedger), NddeError> {
    let steps = p.steps()?;
    let tau = p.delay;
    let a = p.neutral_coefficient();
    let history = p.history.shifted(-tau);
    let mut pieces: Vec<Poly> = Vec::with_capacity(steps + 1);
    let mut prev = history.clone();
    for k in 0..=steps {
        let next = step(&prev, a, p.b, tau);
        if next.degree() > p.max_degree {
            return Err(NddeError::DegreeOverflow { step: k, degree: next.degree(), max: p.max_degree });
        }
        pieces.push(next.clone());
        prev = next;
    }
    let mut ledger = BreakingPointLedger { times: vec![], jump_in_derivative: vec![], smoothness_order: vec![], lowest_jump: vec![] };
    for k in 0..=steps {
        let left = if k == 0 { &history } else { &pieces[k - 1] };
        let (d1, order, lowest) = classify(left, &pieces[k], tau);
        ledger.times.push(k as f64 * tau);
        ledger.jump_in_derivative.push(d1);
        ledger.smoothness_order.push(order);
        ledger.lowest_jump.push(lowest);
    }
    pieces.truncate(steps);
    Ok((DelaySolution { delay: tau, history, pieces }, ledger))
}

/// Smoothness class at each breaking point.
pub fn smoothing_profile(ledger: &BreakingPointLedger) -> Vec<Smoothness> {
    ledger.smoothness_order.clone()
}
