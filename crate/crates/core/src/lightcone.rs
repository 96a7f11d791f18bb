//! Retarded and advanced light-cone times of a worldline, exact and far-zone.
//!
//! Every condition is written as `G(tau) = 0` with `G` strictly increasing
//! (guaranteed by `|v| < 1`), so the root is unique. The solver first locates
//! the segment holding the root from the sign of `G` at segment ends, then
//! bisects inside that segment to width [`BISECTION_WIDTH`] and polishes with
//! safeguarded Newton steps on the segment's polynomial. Because the polish
//! never leaves one smooth segment, the derivative jump at a breakpoint can
//! not stall it; a root on a boundary is reached by the bisection bracket.

use serde::Serialize;
use thiserror::Error;

use crate::trajectory::{Kinematics, PiecewiseTrajectory, Segment, Side, TrajectoryError};
use crate::vec3::{Direction, Vec3};

/// Cone times closer than this to a segment boundary are flagged `at_breakpoint`.
pub const BREAKPOINT_TOLERANCE: f64 = 1e-12;
/// Bracket width reached by bisection before Newton polishing.
pub const BISECTION_WIDTH: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LightconeError {
    #[error("domain [{start}, {end}] does not bracket the cone time (G(start) = {g_start:e}, G(end) = {g_end:e})")]
    NoBracket { start: f64, end: f64, g_start: f64, g_end: f64 },
    #[error("influence interval collapses: probe coincides with the partner position")]
    DegenerateInterval,
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Whether the cone opens into the past or the future of the event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConeKind {
    Retarded,
    Advanced,
}

impl ConeKind {
    /// The side from which kinematics are taken: the causal limit.
    pub fn side(self) -> Side {
        match self {
            ConeKind::Retarded => Side::Left,
            ConeKind::Advanced => Side::Right,
        }
    }
}

/// A worldline point on the light cone of an observation event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightconeSolution {
    pub kind: ConeKind,
    pub t_cone: f64,
    pub pos: Vec3,
    pub vel: Vec3,
    pub acc: Vec3,
    /// `d t_cone / d t` of the observation time.
    pub jacobian: f64,
    pub at_breakpoint: bool,
    /// Distance from `t_cone` to the nearest interior breakpoint.
    pub breakpoint_distance: f64,
    /// Index of the segment whose polynomial holds the root.
    pub segment: usize,
}

impl LightconeSolution {
    /// Kinematics at the cone time from either side; differs from the stored
    /// causal values only at a breakpoint.
    pub fn kinematics_from(&self, traj: &PiecewiseTrajectory, side: Side) -> Result<Kinematics, TrajectoryError> {
        traj.kinematics(self.t_cone, side)
    }
}

/// Span of partner times a worldline event can influence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InfluenceInterval {
    pub t_min: f64,
    pub t_max: f64,
}

impl InfluenceInterval {
    pub fn width(&self) -> f64 {
        self.t_max - self.t_min
    }
}

#[derive(Debug, Clone, Copy)]
enum Condition {
    /// `tau + sign |x(tau) - p| - t_event`, `sign = +1` retarded, `-1` advanced.
    Exact { t_event: f64, p: Vec3, sign: f64 },
    /// `tau - sign n.x(tau) - u`.
    Far { u: f64, n: Vec3, sign: f64 },
}

impl Condition {
    fn reference_time(&self) -> f64 {
        match *self {
            Condition::Exact { t_event, .. } => t_event,
            Condition::Far { u, .. } => u,
        }
    }

    /// `(G, dG/ds)` at local time `s` of `seg`, with `offset = t_start - reference`.
    fn eval(&self, seg: &Segment, offset: f64, s: f64) -> (f64, f64) {
        let x = seg.position_local(s);
        let v = seg.velocity_local(s);
        match *self {
            Condition::Exact { p, sign, .. } => {
                let d = x - p;
                let r = d.norm();
                let dr = if r > 0.0 { d.dot(v) / r } else { 0.0 };
                (offset + s + sign * r, 1.0 + sign * dr)
            }
            Condition::Far { n, sign, .. } => (offset + s - sign * n.dot(x), 1.0 - sign * n.dot(v)),
        }
    }

    fn at(&self, traj: &PiecewiseTrajectory, idx: usize, end: bool) -> f64 {
        let seg = &traj.segments()[idx];
        let s = if end { seg.duration() } else { 0.0 };
        self.eval(seg, seg.t_start() - self.reference_time(), s).0
    }

    fn kind(&self) -> ConeKind {
        let sign = match *self {
            Condition::Exact { sign, .. } | Condition::Far { sign, .. } => sign,
        };
        if sign > 0.0 {
            ConeKind::Retarded
        } else {
            ConeKind::Advanced
        }
    }
}

fn solve(traj: &PiecewiseTrajectory, cond: Condition) -> Result<LightconeSolution, LightconeError> {
    let segs = traj.segments();
    let last = segs.len() - 1;
    let g_start = cond.at(traj, 0, false);
    let g_end = cond.at(traj, last, true);
    if !(g_start <= 0.0 && g_end >= 0.0) {
        return Err(LightconeError::NoBracket { start: traj.start(), end: traj.end(), g_start, g_end });
    }
    // First segment whose end already has G >= 0.
    let (mut lo_i, mut hi_i) = (0usize, last);
    while lo_i < hi_i {
        let mid = (lo_i + hi_i) / 2;
        if cond.at(traj, mid, true) >= 0.0 {
            hi_i = mid;
        } else {
            lo_i = mid + 1;
        }
    }
    let idx = lo_i;
    let seg = &segs[idx];
    let len = seg.duration();
    let offset = seg.t_start() - cond.reference_time();
    let g = |s: f64| cond.eval(seg, offset, s);

    let (mut lo, mut hi) = (0.0, len);
    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        if g(mid).0 < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..60 {
        let (val, slope) = g(s);
        if val == 0.0 {
            break;
        }
        if val < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let mut next = s - val / slope;
        if !(next >= lo && next <= hi) {
            next = 0.5 * (lo + hi);
        }
        let done = (next - s).abs() <= 4.0 * f64::EPSILON * s.abs().max(f64::MIN_POSITIVE);
        s = next;
        if done {
            break;
        }
    }

    let t_cone = seg.t_start() + s;
    let dist_start = if idx > 0 { s } else { f64::INFINITY };
    let dist_end = if idx < last { len - s } else { f64::INFINITY };
    let breakpoint_distance = dist_start.min(dist_end);
    let at_breakpoint = breakpoint_distance <= BREAKPOINT_TOLERANCE;
    let kind = cond.kind();
    let kin = match (at_breakpoint, kind.side()) {
        (true, Side::Left) if dist_start <= BREAKPOINT_TOLERANCE => {
            let prev = &segs[idx - 1];
            prev.kinematics_local(prev.duration())
        }
        (true, Side::Right) if dist_end <= BREAKPOINT_TOLERANCE => segs[idx + 1].kinematics_local(0.0),
        _ => seg.kinematics_local(s),
    };
    let jacobian = match cond {
        Condition::Exact { p, sign, .. } => {
            // n from the charge towards the event.
            let nhat = (p - kin.pos).normalized().unwrap_or(Vec3::ZERO);
            1.0 / (1.0 - sign * nhat.dot(kin.vel))
        }
        Condition::Far { n, sign, .. } => 1.0 / (1.0 - sign * n.dot(kin.vel)),
    };
    Ok(LightconeSolution {
        kind,
        t_cone,
        pos: kin.pos,
        vel: kin.vel,
        acc: kin.acc,
        jacobian,
        at_breakpoint,
        breakpoint_distance,
        segment: idx,
    })
}

/// Solves `tau = t - |x(tau) - p|`.
pub fn solve_retarded(traj: &PiecewiseTrajectory, event_time: f64, event_pos: Vec3) -> Result<LightconeSolution, LightconeError> {
    solve(traj, Condition::Exact { t_event: event_time, p: event_pos, sign: 1.0 })
}

/// Solves `tau = t + |x(tau) - p|`.
pub fn solve_advanced(traj: &PiecewiseTrajectory, event_time: f64, event_pos: Vec3) -> Result<LightconeSolution, LightconeError> {
    solve(traj, Condition::Exact { t_event: event_time, p: event_pos, sign: -1.0 })
}

/// Far-zone retarded condition `tau = t - R + n.x(tau)`.
///
/// With `radius = None`, `t` is taken to be the reduced time `t - R` itself,
/// which is how the field code calls it.
pub fn solve_retarded_far(
    traj: &PiecewiseTrajectory,
    t: f64,
    n: Direction,
    radius: Option<f64>,
) -> Result<LightconeSolution, LightconeError> {
    let u = radius.map_or(t, |r| t - r);
    solve(traj, Condition::Far { u, n: n.vec(), sign: 1.0 })
}

/// Far-zone advanced condition `tau = t + R - n.x(tau)`; with `radius = None`
/// the input is the reduced advanced time `t + R`.
pub fn solve_advanced_far(
    traj: &PiecewiseTrajectory,
    t: f64,
    n: Direction,
    radius: Option<f64>,
) -> Result<LightconeSolution, LightconeError> {
    let w = radius.map_or(t, |r| t + r);
    solve(traj, Condition::Far { u: w, n: n.vec(), sign: -1.0 })
}

/// `d t_cone / d t = 1 / (1 - n . v)` from the solution's causal-side velocity.
pub fn lightcone_jacobian(sol: &LightconeSolution, n: Direction) -> f64 {
    1.0 / (1.0 - n.vec().dot(sol.vel))
}

/// Partner times `(t2 - d, t2 + d)`, `d = |x1_probe - x2(t2)|`, reachable from the
/// probe between its retarded and advanced cones.
pub fn influence_interval(t2: f64, x1_probe: Vec3, traj2: &PiecewiseTrajectory) -> Result<InfluenceInterval, LightconeError> {
    let x2 = traj2.position(t2)?;
    let d = (x1_probe - x2).norm();
    if d == 0.0 {
        return Err(LightconeError::DegenerateInterval);
    }
    Ok(InfluenceInterval { t_min: t2 - d, t_max: t2 + d })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    /// Plain bisection on the absolute-time condition, independent of the solver.
    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn static_particle_retarded_and_advanced() {
        let tr = PiecewiseTrajectory::constant(Vec3::ZERO, -100.0, 100.0).unwrap();
        let r = solve_retarded(&tr, 10.0, v(5.0, 0.0, 0.0)).unwrap();
        assert!((r.t_cone - 5.0).abs() < 1e-13);
        let a = solve_advanced(&tr, 10.0, v(5.0, 0.0, 0.0)).unwrap();
        assert!((a.t_cone - 15.0).abs() < 1e-13);
        let tr = PiecewiseTrajectory::constant(v(1.0, 0.0, 0.0), -100.0, 100.0).unwrap();
        let r = solve_retarded(&tr, 3.0, v(1.0, 0.0, 4.0)).unwrap();
        assert!((r.t_cone + 1.0).abs() < 1e-13);
        let a = solve_advanced(&tr, 3.0, v(1.0, 0.0, 0.0)).unwrap();
        assert!((a.t_cone - 3.0).abs() < 1e-13);
    }

    #[test]
    fn uniform_motion_matches_bisection_oracle() {
        let tr = PiecewiseTrajectory::uniform(Vec3::ZERO, v(0.5, 0.0, 0.0), -100.0, 100.0).unwrap();
        // Receding from the observer: s = -|0.5 s + 10| gives -20/3.
        let p = v(-10.0, 0.0, 0.0);
        let oracle = bisect(|s| s + (0.5 * s + 10.0).abs(), -100.0, 100.0);
        assert!((oracle + 20.0 / 3.0).abs() < 1e-12);
        let sol = solve_retarded(&tr, 0.0, p).unwrap();
        assert!((sol.t_cone - oracle).abs() < 1e-12);
        assert!((sol.t_cone + 20.0 / 3.0).abs() < 1e-12);
        // Approaching the observer at (10, 0, 0) the root is -20.
        let q = v(10.0, 0.0, 0.0);
        let oracle = bisect(|s| s + (0.5 * s - 10.0).abs(), -100.0, 100.0);
        let sol = solve_retarded(&tr, 0.0, q).unwrap();
        assert!((sol.t_cone - oracle).abs() < 1e-12);
        assert!((sol.t_cone + 20.0).abs() < 1e-12);
        // Time reversal: y(t) = x(-t) = -0.5 t, advanced cone from (0, p).
        let rev = tr.time_reversed();
        let adv = solve_advanced(&rev, 0.0, p).unwrap();
        assert!((adv.t_cone - 20.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn far_zone_static_cases() {
        let tr = PiecewiseTrajectory::constant(Vec3::ZERO, -2000.0, 2000.0).unwrap();
        let sol = solve_retarded_far(&tr, 1003.0, Direction::x(), Some(1000.0)).unwrap();
        assert_eq!(sol.t_cone, 3.0);
        let tr = PiecewiseTrajectory::constant(v(0.7, 0.0, 0.0), -2000.0, 2000.0).unwrap();
        let sol = solve_retarded_far(&tr, 1003.0, Direction::x(), Some(1000.0)).unwrap();
        assert!((sol.t_cone - 3.7).abs() < 1e-13);
        let sol = solve_retarded_far(&tr, 3.0, Direction::x(), None).unwrap();
        assert!((sol.t_cone - 3.7).abs() < 1e-12);
    }

    #[test]
    fn jacobian_formula() {
        let tr = PiecewiseTrajectory::uniform(Vec3::ZERO, v(0.5, 0.0, 0.0), -100.0, 100.0).unwrap();
        let sol = solve_retarded_far(&tr, 0.0, Direction::x(), None).unwrap();
        assert!((lightcone_jacobian(&sol, Direction::x()) - 2.0).abs() < 1e-15);
        assert!((lightcone_jacobian(&sol, Direction::y()) - 1.0).abs() < 1e-15);
        let st = PiecewiseTrajectory::constant(Vec3::ZERO, -1.0, 1.0).unwrap();
        let sol = solve_retarded_far(&st, 0.0, Direction::z(), None).unwrap();
        assert_eq!(lightcone_jacobian(&sol, Direction::z()), 1.0);
    }

    #[test]
    fn breakpoint_cone_times_are_flagged_with_causal_side() {
        let tr = PiecewiseTrajectory::polygon(&[-50.0, 0.0, 50.0], &[v(-5.0, 0.0, 0.0), Vec3::ZERO, v(-5.0, 0.0, 0.0)]).unwrap();
        // Static-at-origin crossing at t = 0, observed along y where n.x = 0.
        let ret = solve_retarded_far(&tr, 0.0, Direction::y(), None).unwrap();
        assert!(ret.at_breakpoint);
        assert!((ret.vel - v(0.1, 0.0, 0.0)).norm() < 1e-15);
        let adv = solve_advanced_far(&tr, 0.0, Direction::y(), None).unwrap();
        assert!(adv.at_breakpoint);
        assert!((adv.vel - v(-0.1, 0.0, 0.0)).norm() < 1e-15);
        let other = ret.kinematics_from(&tr, Side::Right).unwrap();
        assert!((other.vel - v(-0.1, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn missing_bracket_is_reported() {
        let tr = PiecewiseTrajectory::constant(Vec3::ZERO, 0.0, 1.0).unwrap();
        assert!(matches!(solve_retarded(&tr, 10.0, v(1.0, 0.0, 0.0)), Err(LightconeError::NoBracket { .. })));
        assert!(matches!(solve_advanced(&tr, -10.0, Vec3::ZERO), Err(LightconeError::NoBracket { .. })));
    }

    #[test]
    fn influence_interval_cases() {
        let tr = PiecewiseTrajectory::constant(Vec3::ZERO, -20.0, 20.0).unwrap();
        let iv = influence_interval(0.0, v(2.0, 0.0, 0.0), &tr).unwrap();
        assert_eq!((iv.t_min, iv.t_max), (-2.0, 2.0));
        let iv = influence_interval(10.0, v(3.0, 4.0, 0.0), &tr).unwrap();
        assert_eq!((iv.t_min, iv.t_max), (5.0, 15.0));
        assert_eq!(influence_interval(1.0, Vec3::ZERO, &tr), Err(LightconeError::DegenerateInterval));
        assert!(matches!(influence_interval(30.0, Vec3::X, &tr), Err(LightconeError::Trajectory(_))));
    }
}
