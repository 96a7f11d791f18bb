//! Reference orbits built from polynomial segments.

use std::f64::consts::TAU;

use crate::system::{SystemError, TwoBodySystem};
use crate::trajectory::{PiecewiseTrajectory, Segment, TrajectoryError};
use crate::vec3::Vec3;

/// Default number of cubic Hermite segments per orbital period.
pub const DEFAULT_SEGMENTS_PER_PERIOD: usize = 256;

/// Planar circle `center + r (cos(w t + phase), sin(w t + phase), 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: Vec3,
    pub radius: f64,
    pub omega: f64,
    pub phase: f64,
}

impl Circle {
    pub fn position(&self, t: f64) -> Vec3 {
        let (s, c) = (self.omega * t + self.phase).sin_cos();
        self.center + Vec3::new(self.radius * c, self.radius * s, 0.0)
    }

    pub fn velocity(&self, t: f64) -> Vec3 {
        let (s, c) = (self.omega * t + self.phase).sin_cos();
        Vec3::new(-s, c, 0.0) * (self.radius * self.omega)
    }

    pub fn speed(&self) -> f64 {
        (self.radius * self.omega).abs()
    }

    fn knots(&self, t0: f64, t1: f64, segments_per_period: usize) -> Vec<f64> {
        let h = TAU / self.omega.abs() / segments_per_period.max(1) as f64;
        let n = ((t1 - t0) / h).ceil().max(1.0) as usize;
        (0..=n).map(|k| if k == n { t1 } else { t0 + (t1 - t0) * k as f64 / n as f64 }).collect()
    }

    /// Cubic Hermite approximation, C1 at the knots.
    pub fn hermite(&self, t0: f64, t1: f64, segments_per_period: usize) -> Result<PiecewiseTrajectory, TrajectoryError> {
        self.blended(t0, t1, segments_per_period, 1.0)
    }

    /// `chord + lambda * (hermite - chord)` on every knot interval: `lambda = 0`
    /// gives the inscribed polygon, `lambda = 1` the Hermite circle.
    pub fn blended(
        &self,
        t0: f64,
        t1: f64,
        segments_per_period: usize,
        lambda: f64,
    ) -> Result<PiecewiseTrajectory, TrajectoryError> {
        let knots = self.knots(t0, t1, segments_per_period);
        let segments = knots
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                let (p0, p1) = (self.position(a), self.position(b));
                let chord = Segment::linear(a, p0, b, p1)?;
                if lambda == 0.0 {
                    return Ok(chord);
                }
                let herm = Segment::hermite(a, p0, self.velocity(a), b, p1, self.velocity(b))?;
                let (cc, hc) = (chord.coeffs(), herm.coeffs());
                let c1 = cc[1] + (hc[1] - cc[1]) * lambda;
                Segment::new(a, b, &[p0, c1, hc[2] * lambda, hc[3] * lambda])
            })
            .collect::<Result<Vec<_>, _>>()?;
        PiecewiseTrajectory::new(segments)
    }
}

/// Two opposite charges on a common circle, diametrically opposed, each moving at `speed`.
pub fn circular_pair(radius: f64, speed: f64, t0: f64, t1: f64, segments_per_period: usize) -> Result<TwoBodySystem, SystemError> {
    blended_circular_pair(radius, speed, t0, t1, segments_per_period, 1.0)
}

/// The polygon-to-circle family of [`Circle::blended`] applied to both particles.
pub fn blended_circular_pair(
    radius: f64,
    speed: f64,
    t0: f64,
    t1: f64,
    segments_per_period: usize,
    lambda: f64,
) -> Result<TwoBodySystem, SystemError> {
    let omega = speed / radius;
    let c1 = Circle { center: Vec3::ZERO, radius, omega, phase: 0.0 };
    let c2 = Circle { phase: std::f64::consts::PI, ..c1 };
    TwoBodySystem::with_defaults(
        c1.blended(t0, t1, segments_per_period, lambda)?,
        c2.blended(t0, t1, segments_per_period, lambda)?,
    )
}
