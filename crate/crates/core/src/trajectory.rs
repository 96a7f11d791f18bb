//! Continuous, piecewise-polynomial worldlines whose velocity may jump at breakpoints.
//!
//! Each [`Segment`] stores position coefficients in the local time `s = t - t_start`,
//! so evaluation near the segment start keeps full precision even when `t` is large.
//! A segment owns the half-open interval `(t_start, t_end]`; the first segment also
//! owns the global domain start.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vec3::Vec3;

/// Highest polynomial degree a segment may carry.
pub const MAX_DEGREE: usize = 3;

/// Position mismatch tolerated at a breakpoint, relative to `1 + |x|`.
pub const CONTINUITY_TOLERANCE: f64 = 1e-12;

/// Samples per segment used by the speed check, on top of the exact extremum search.
const SPEED_SAMPLES: usize = 1024;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("trajectory has no segments")]
    Empty,
    #[error("segment {segment}: non-finite time or coefficient")]
    NonFinite { segment: usize },
    #[error("segment {segment}: t_start {t_start} is not before t_end {t_end}")]
    EmptySegment { segment: usize, t_start: f64, t_end: f64 },
    #[error("segment {segment}: degree {degree} exceeds the maximum of 3")]
    DegreeTooHigh { segment: usize, degree: usize },
    #[error("segment {segment}: starts at {found} but the previous segment ends at {expected}")]
    NotContiguous { segment: usize, expected: f64, found: f64 },
    #[error("segment {segment}: position jumps by {gap:e} at its start")]
    Discontinuous { segment: usize, gap: f64 },
    #[error("segment {segment}: speed {speed} reaches or exceeds light speed")]
    Superluminal { segment: usize, speed: f64 },
    #[error("time {t} outside trajectory domain [{start}, {end}]")]
    OutOfDomain { t: f64, start: f64, end: f64 },
}

/// Which one-sided limit to take at a breakpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn flipped(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// Position, velocity and acceleration at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub pos: Vec3,
    pub vel: Vec3,
    pub acc: Vec3,
}

/// One polynomial piece `x(t) = sum_k c_k (t - t_start)^k`, `k <= 3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    t_start: f64,
    t_end: f64,
    coeffs: [Vec3; MAX_DEGREE + 1],
    degree: usize,
}

impl Segment {
    /// Builds a segment from local-time coefficients; checks finiteness, ordering,
    /// degree and subluminality.
    pub fn new(t_start: f64, t_end: f64, coeffs: &[Vec3]) -> Result<Segment, TrajectoryError> {
        Self::checked(0, t_start, t_end, coeffs)
    }

    fn checked(index: usize, t_start: f64, t_end: f64, coeffs: &[Vec3]) -> Result<Segment, TrajectoryError> {
        if !t_start.is_finite() || !t_end.is_finite() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(TrajectoryError::NonFinite { segment: index });
        }
        if t_start >= t_end {
            return Err(TrajectoryError::EmptySegment { segment: index, t_start, t_end });
        }
        if coeffs.len() > MAX_DEGREE + 1 {
            return Err(TrajectoryError::DegreeTooHigh { segment: index, degree: coeffs.len() - 1 });
        }
        let mut c = [Vec3::ZERO; MAX_DEGREE + 1];
        c[..coeffs.len()].copy_from_slice(coeffs);
        let degree = coeffs.len().saturating_sub(1);
        let seg = Segment { t_start, t_end, coeffs: c, degree };
        let speed = seg.max_speed();
        if !(speed < 1.0) {
            return Err(TrajectoryError::Superluminal { segment: index, speed });
        }
        Ok(seg)
    }

    /// Straight piece from `x0` at `t0` to `x1` at `t1`.
    pub fn linear(t0: f64, x0: Vec3, t1: f64, x1: Vec3) -> Result<Segment, TrajectoryError> {
        let v = (x1 - x0) / (t1 - t0);
        Segment::new(t0, t1, &[x0, v])
    }

    /// Cubic Hermite piece matching positions and velocities at both ends.
    pub fn hermite(t0: f64, x0: Vec3, v0: Vec3, t1: f64, x1: Vec3, v1: Vec3) -> Result<Segment, TrajectoryError> {
        let h = t1 - t0;
        let d = (x1 - x0) / h;
        let c2 = (d * 3.0 - v0 * 2.0 - v1) / h;
        let c3 = (v0 + v1 - d * 2.0) / (h * h);
        Segment::new(t0, t1, &[x0, v0, c2, c3])
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Local-time coefficients `c_0 ..= c_degree`.
    pub fn coeffs(&self) -> &[Vec3] {
        &self.coeffs[..=self.degree]
    }

    pub fn position_local(&self, s: f64) -> Vec3 {
        let c = &self.coeffs;
        ((c[3] * s + c[2]) * s + c[1]) * s + c[0]
    }

    pub fn velocity_local(&self, s: f64) -> Vec3 {
        let c = &self.coeffs;
        (c[3] * (3.0 * s) + c[2] * 2.0) * s + c[1]
    }

    pub fn acceleration_local(&self, s: f64) -> Vec3 {
        let c = &self.coeffs;
        c[3] * (6.0 * s) + c[2] * 2.0
    }

    pub fn kinematics_local(&self, s: f64) -> Kinematics {
        Kinematics { pos: self.position_local(s), vel: self.velocity_local(s), acc: self.acceleration_local(s) }
    }

    pub fn position(&self, t: f64) -> Vec3 {
        self.position_local(t - self.t_start)
    }

    /// Supremum of `|v|` over the closed segment.
    ///
    /// `|v|^2` has stationary points where `v . a = 0`; those are located by
    /// bisection between sign changes of a dense sample, then compared with
    /// the sampled values and both endpoints.
    pub fn max_speed(&self) -> f64 {
        let len = self.duration();
        let va = |s: f64| self.velocity_local(s).dot(self.acceleration_local(s));
        let mut best = self.velocity_local(0.0).norm_sq().max(self.velocity_local(len).norm_sq());
        if self.degree < 2 {
            return best.sqrt();
        }
        let mut prev_s = 0.0;
        let mut prev_g = va(0.0);
        for i in 1..=SPEED_SAMPLES {
            let s = len * i as f64 / SPEED_SAMPLES as f64;
            best = best.max(self.velocity_local(s).norm_sq());
            let g = va(s);
            if prev_g > 0.0 && g < 0.0 {
                let (mut lo, mut hi) = (prev_s, s);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if va(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                best = best.max(self.velocity_local(0.5 * (lo + hi)).norm_sq());
            }
            prev_s = s;
            prev_g = g;
        }
        best.sqrt()
    }

    /// The same piece traversed backwards in time: `y(t) = x(-t)` on `[-t_end, -t_start]`.
    pub fn time_reversed(&self) -> Segment {
        // y(s') = p(L - s'), expanded with binomial coefficients.
        let len = self.duration();
        let mut out = [Vec3::ZERO; MAX_DEGREE + 1];
        const BINOM: [[f64; 4]; 4] = [[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, 2.0, 1.0, 0.0], [1.0, 3.0, 3.0, 1.0]];
        for (k, ck) in self.coeffs.iter().enumerate() {
            for j in 0..=k {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                out[j] += *ck * (BINOM[k][j] * sign * len.powi((k - j) as i32));
            }
        }
        Segment { t_start: -self.t_end, t_end: -self.t_start, coeffs: out, degree: self.degree }
    }
}

/// A continuous worldline made of contiguous polynomial segments.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseTrajectory {
    segments: Vec<Segment>,
}

impl PiecewiseTrajectory {
    /// Validates contiguity, position continuity and subluminality.
    pub fn new(segments: Vec<Segment>) -> Result<PiecewiseTrajectory, TrajectoryError> {
        if segments.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        for (i, pair) in segments.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            if a.t_end != b.t_start {
                return Err(TrajectoryError::NotContiguous { segment: i + 1, expected: a.t_end, found: b.t_start });
            }
            let end = a.position_local(a.duration());
            let start = b.position_local(0.0);
            let gap = (end - start).norm();
            if gap > CONTINUITY_TOLERANCE * (1.0 + end.norm()) {
                return Err(TrajectoryError::Discontinuous { segment: i + 1, gap });
            }
        }
        Ok(PiecewiseTrajectory { segments })
    }

    /// Builds and validates segments from raw `(t_start, t_end, coeffs)` pieces,
    /// reporting errors against the piece index.
    pub fn from_pieces<'a, I>(pieces: I) -> Result<PiecewiseTrajectory, TrajectoryError>
    where
        I: IntoIterator<Item = (f64, f64, &'a [Vec3])>,
    {
        let segments = pieces
            .into_iter()
            .enumerate()
            .map(|(i, (a, b, c))| Segment::checked(i, a, b, c))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(segments)
    }

    /// A particle at rest at `pos` on `[t0, t1]`.
    pub fn constant(pos: Vec3, t0: f64, t1: f64) -> Result<PiecewiseTrajectory, TrajectoryError> {
        Self::new(vec![Segment::new(t0, t1, &[pos])?])
    }

    /// Uniform motion `x(t) = x_at_zero + v t` on `[t0, t1]`.
    pub fn uniform(x_at_zero: Vec3, v: Vec3, t0: f64, t1: f64) -> Result<PiecewiseTrajectory, TrajectoryError> {
        Self::new(vec![Segment::new(t0, t1, &[x_at_zero + v * t0, v])?])
    }

    /// Polygonal path through `(times[i], points[i])`.
    pub fn polygon(times: &[f64], points: &[Vec3]) -> Result<PiecewiseTrajectory, TrajectoryError> {
        assert_eq!(times.len(), points.len(), "one point per vertex time");
        if times.len() < 2 {
            return Err(TrajectoryError::Empty);
        }
        let segments = (0..times.len() - 1)
            .map(|i| {
                Segment::linear(times[i], points[i], times[i + 1], points[i + 1]).map_err(|e| reindex(e, i))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(segments)
    }

    /// C1 path of cubic Hermite pieces through the given knots.
    pub fn hermite(times: &[f64], points: &[Vec3], velocities: &[Vec3]) -> Result<PiecewiseTrajectory, TrajectoryError> {
        assert!(times.len() == points.len() && points.len() == velocities.len());
        if times.len() < 2 {
            return Err(TrajectoryError::Empty);
        }
        let segments = (0..times.len() - 1)
            .map(|i| {
                Segment::hermite(times[i], points[i], velocities[i], times[i + 1], points[i + 1], velocities[i + 1])
                    .map_err(|e| reindex(e, i))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(segments)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn start(&self) -> f64 {
        self.segments[0].t_start
    }

    pub fn end(&self) -> f64 {
        self.segments[self.segments.len() - 1].t_end
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.start(), self.end())
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start() && t <= self.end()
    }

    /// Interior segment boundaries, where velocity and acceleration may jump.
    pub fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.segments[1..].iter().map(|s| s.t_start)
    }

    /// Distance from `t` to the closest interior breakpoint (infinite if there is none).
    pub fn breakpoint_distance(&self, t: f64) -> f64 {
        let idx = self.segments.partition_point(|s| s.t_end < t);
        let mut best = f64::INFINITY;
        for j in [idx.saturating_sub(1), idx, idx + 1] {
            if j >= 1 && j < self.segments.len() {
                best = best.min((self.segments[j].t_start - t).abs());
            }
        }
        best
    }

    pub fn is_breakpoint(&self, t: f64, tol: f64) -> bool {
        self.breakpoint_distance(t) <= tol
    }

    fn check_domain(&self, t: f64) -> Result<(), TrajectoryError> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(TrajectoryError::OutOfDomain { t, start: self.start(), end: self.end() })
        }
    }

    /// Index of the segment supplying the `side` limit at `t`; domain ends clamp to
    /// the only available segment. `t` must lie in the domain.
    pub fn segment_index(&self, t: f64, side: Side) -> usize {
        let last = self.segments.len() - 1;
        match side {
            Side::Left => self.segments.partition_point(|s| s.t_end < t).min(last),
            Side::Right => self.segments.partition_point(|s| s.t_end <= t).min(last),
        }
    }

    /// Position under the `(t_start, t_end]` convention.
    pub fn position(&self, t: f64) -> Result<Vec3, TrajectoryError> {
        self.check_domain(t)?;
        Ok(self.segments[self.segment_index(t, Side::Left)].position(t))
    }

    pub fn velocity_onesided(&self, t: f64, side: Side) -> Result<Vec3, TrajectoryError> {
        self.check_side(t, side)?;
        let seg = &self.segments[self.segment_index(t, side)];
        Ok(seg.velocity_local(t - seg.t_start))
    }

    pub fn acceleration_onesided(&self, t: f64, side: Side) -> Result<Vec3, TrajectoryError> {
        self.check_side(t, side)?;
        let seg = &self.segments[self.segment_index(t, side)];
        Ok(seg.acceleration_local(t - seg.t_start))
    }

    fn check_side(&self, t: f64, side: Side) -> Result<(), TrajectoryError> {
        self.check_domain(t)?;
        let bad = match side {
            Side::Left => t <= self.start(),
            Side::Right => t >= self.end(),
        };
        if bad {
            Err(TrajectoryError::OutOfDomain { t, start: self.start(), end: self.end() })
        } else {
            Ok(())
        }
    }

    /// One-sided kinematics, clamping the side at the domain ends.
    pub fn kinematics(&self, t: f64, side: Side) -> Result<Kinematics, TrajectoryError> {
        self.check_domain(t)?;
        let seg = &self.segments[self.segment_index(t, side)];
        Ok(seg.kinematics_local(t - seg.t_start))
    }

    /// Largest speed over all segments.
    pub fn max_speed(&self) -> f64 {
        self.segments.iter().map(Segment::max_speed).fold(0.0, f64::max)
    }

    /// Upper estimate of `max |x(t)|` over the domain.
    pub fn max_radius(&self) -> f64 {
        let mut best: f64 = 0.0;
        let mut margin: f64 = 0.0;
        for seg in &self.segments {
            let len = seg.duration();
            let samples = if seg.degree <= 1 { 1 } else { 64 };
            for i in 0..=samples {
                best = best.max(seg.position_local(len * i as f64 / samples as f64).norm());
            }
            if seg.degree > 1 {
                // |x| can exceed the samples by at most vmax * spacing / 2.
                margin = margin.max(len / samples as f64 * 0.5);
            }
        }
        best + margin
    }

    /// `y(t) = x(-t)`; velocities flip sign, accelerations are preserved.
    pub fn time_reversed(&self) -> PiecewiseTrajectory {
        let segments = self.segments.iter().rev().map(Segment::time_reversed).collect();
        PiecewiseTrajectory { segments }
    }
}

fn reindex(e: TrajectoryError, i: usize) -> TrajectoryError {
    match e {
        TrajectoryError::NonFinite { .. } => TrajectoryError::NonFinite { segment: i },
        TrajectoryError::EmptySegment { t_start, t_end, .. } => TrajectoryError::EmptySegment { segment: i, t_start, t_end },
        TrajectoryError::DegreeTooHigh { degree, .. } => TrajectoryError::DegreeTooHigh { segment: i, degree },
        TrajectoryError::Superluminal { speed, .. } => TrajectoryError::Superluminal { segment: i, speed },
        other => other,
    }
}
