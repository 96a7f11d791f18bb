//! Mixed-boundary action for particle 1 against a prescribed partner
//! worldline, its discrete gradient over piecewise-linear node paths, the
//! Euler-Lagrange residual, the momentum current `dL/dv1` and its continuity
//! across velocity jumps, and a BFGS extremizer.
//!
//! The Lagrangian is
//!
//! ```text
//! L = -m sqrt(1 - v1^2) + c (1 - v1.v2-) / (2 rho-) + c (1 - v1.v2+) / (2 rho+)
//! ```
//!
//! with `c = q1 q2`, `rho- = r- - (x1 - x2-).v2-` on the retarded cone and
//! `rho+ = r+ + (x1 - x2+).v2+` on the advanced cone.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lightcone::{solve_advanced, solve_retarded, ConeKind, LightconeError};
use crate::quadrature::GaussRule;
use crate::system::TwoBodySystem;
use crate::trajectory::{PiecewiseTrajectory, Side, TrajectoryError};
use crate::vec3::Vec3;

pub const DEFAULT_MASS1: f64 = 1.0;
pub const DEFAULT_COUPLING: f64 = -1.0;
pub const DEFAULT_MIN_SEPARATION: f64 = 1e-6;
pub const DEFAULT_QUADRATURE_POINTS: usize = 8;
pub const BREAKPOINT_TOLERANCE: f64 = 1e-12;
/// Step for the total time derivative in the Euler-Lagrange residual.
pub const EL_TIME_STEP: f64 = 1e-4;
/// Relative step for the position derivative in the Euler-Lagrange residual.
pub const EL_POSITION_STEP: f64 = 1e-6;
pub const JUMP_SOLVE_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VariationalError {
    #[error("{kind:?} cone of t1 = {t1} leaves the partner domain")]
    CoverageGap { t1: f64, kind: ConeKind },
    #[error("separation {distance:e} below the minimum at t1 = {t1}")]
    Collision { t1: f64, distance: f64 },
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("invalid boundary: {0}")]
    InvalidBoundary(String),
    #[error("path interval {interval} moves at speed {speed}")]
    Superluminal { interval: usize, speed: f64 },
    #[error("line search failed at iteration {iteration}")]
    LineSearchFailure { iteration: usize },
    #[error("stencil around t = {t} crosses a breakpoint")]
    BreakpointInStencil { t: f64 },
    #[error("t = {t} is not a breakpoint of trajectory 1")]
    NotABreakpoint { t: f64 },
    #[error("jump velocity solve did not converge (residual {residual:e})")]
    JumpSolveFailed { residual: f64 },
    #[error(transparent)]
    Lightcone(#[from] LightconeError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Fixed endpoints of trajectory 1 plus the prescribed partner worldline.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryConfig {
    pub t_start: f64,
    pub t_end: f64,
    pub x_start: Vec3,
    pub x_end: Vec3,
    pub partner: PiecewiseTrajectory,
    pub mass1: f64,
    /// `q1 q2`.
    pub coupling: f64,
    pub min_separation: f64,
    pub quadrature_points: usize,
}

impl BoundaryConfig {
    pub fn new(t_start: f64, t_end: f64, x_start: Vec3, x_end: Vec3, partner: PiecewiseTrajectory) -> BoundaryConfig {
        BoundaryConfig {
            t_start,
            t_end,
            x_start,
            x_end,
            partner,
            mass1: DEFAULT_MASS1,
            coupling: DEFAULT_COUPLING,
            min_separation: DEFAULT_MIN_SEPARATION,
            quadrature_points: DEFAULT_QUADRATURE_POINTS,
        }
    }

    /// Checks parameters and that the partner covers the retarded cone of the
    /// start point and the advanced cone of the end point.
    pub fn validate(&self) -> Result<(), VariationalError> {
        let bad = |m: String| Err(VariationalError::InvalidBoundary(m));
        if !(self.t_start.is_finite() && self.t_end.is_finite() && self.t_start < self.t_end) {
            return bad(format!("[{}, {}] is not an interval", self.t_start, self.t_end));
        }
        if !(self.x_start.is_finite() && self.x_end.is_finite()) {
            return bad("endpoints must be finite".into());
        }
        if !(self.mass1 > 0.0 && self.mass1.is_finite()) {
            return bad(format!("mass1 must be positive, got {}", self.mass1));
        }
        if !self.coupling.is_finite() {
            return bad("coupling must be finite".into());
        }
        if !(self.min_separation > 0.0) {
            return bad("min_separation must be positive".into());
        }
        if self.quadrature_points == 0 {
            return bad("quadrature_points must be positive".into());
        }
        if self.coupling != 0.0 {
            let inter = self.interaction();
            inter.cone(self.t_start, self.x_start, ConeKind::Retarded, None)?;
            inter.cone(self.t_end, self.x_end, ConeKind::Advanced, None)?;
        }
        Ok(())
    }

    pub fn interaction(&self) -> Interaction<'_> {
        Interaction { partner: &self.partner, mass1: self.mass1, coupling: self.coupling, min_separation: self.min_separation }
    }
}

/// Node path of trajectory 1, linear between nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizedPath {
    pub node_times: Vec<f64>,
    pub node_positions: Vec<Vec3>,
}

impl DiscretizedPath {
    /// Straight line at uniform velocity between the boundary endpoints, `intervals` pieces.
    pub fn straight(boundary: &BoundaryConfig, intervals: usize) -> DiscretizedPath {
        let n = intervals.max(1);
        let (t0, t1) = (boundary.t_start, boundary.t_end);
        let mut node_times: Vec<f64> = (0..=n).map(|k| t0 + (t1 - t0) * k as f64 / n as f64).collect();
        node_times[n] = t1;
        let mut node_positions: Vec<Vec3> =
            (0..=n).map(|k| boundary.x_start + (boundary.x_end - boundary.x_start) * (k as f64 / n as f64)).collect();
        node_positions[0] = boundary.x_start;
        node_positions[n] = boundary.x_end;
        DiscretizedPath { node_times, node_positions }
    }

    pub fn len(&self) -> usize {
        self.node_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_times.is_empty()
    }

    pub fn interval_velocity(&self, i: usize) -> Vec3 {
        (self.node_positions[i + 1] - self.node_positions[i]) / (self.node_times[i + 1] - self.node_times[i])
    }

    pub fn validate(&self, boundary: &BoundaryConfig) -> Result<(), VariationalError> {
        let bad = |m: String| Err(VariationalError::InvalidPath(m));
        let n = self.node_times.len();
        if n < 2 || self.node_positions.len() != n {
            return bad(format!("need matching node lists of length >= 2, got {} times and {} positions", n, self.node_positions.len()));
        }
        if self.node_times.iter().any(|t| !t.is_finite()) || self.node_positions.iter().any(|p| !p.is_finite()) {
            return bad("nodes must be finite".into());
        }
        if let Some(i) = self.node_times.windows(2).position(|w| w[0] >= w[1]) {
            return bad(format!("node_times not strictly increasing at index {}", i + 1));
        }
        if self.node_times[0] != boundary.t_start || self.node_times[n - 1] != boundary.t_end {
            return bad("node_times must start at t_start and end at t_end".into());
        }
        if self.node_positions[0] != boundary.x_start || self.node_positions[n - 1] != boundary.x_end {
            return bad("end nodes must equal the fixed endpoints".into());
        }
        for i in 0..n - 1 {
            let speed = self.interval_velocity(i).norm();
            if !(speed < 1.0) {
                return Err(VariationalError::Superluminal { interval: i, speed });
            }
        }
        Ok(())
    }

    pub fn trajectory(&self) -> Result<PiecewiseTrajectory, VariationalError> {
        Ok(PiecewiseTrajectory::polygon(&self.node_times, &self.node_positions)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConeTerm {
    pub t2: f64,
    pub x2: Vec3,
    pub v2: Vec3,
    pub r: f64,
    /// Retarded `r - (x1 - x2).v2`, advanced `r + (x1 - x2).v2`.
    pub rho: f64,
    pub segment: usize,
}

/// Particle-1 parameters and the partner worldline entering the Lagrangian.
#[derive(Debug, Clone, Copy)]
pub struct Interaction<'a> {
    pub partner: &'a PiecewiseTrajectory,
    pub mass1: f64,
    pub coupling: f64,
    pub min_separation: f64,
}

impl<'a> Interaction<'a> {
    /// Particle 1 of `system` against particle 2, with `c = q1 q2`.
    pub fn from_system(system: &'a TwoBodySystem) -> Interaction<'a> {
        let (p1, p2) = (system.particle1(), system.particle2());
        Interaction { partner: &p2.trajectory, mass1: p1.mass, coupling: p1.charge * p2.charge, min_separation: DEFAULT_MIN_SEPARATION }
    }

    /// Partner cone data for the event `(t1, x1)`; `side` overrides the causal
    /// side when the cone time is a partner breakpoint.
    pub fn cone(&self, t1: f64, x1: Vec3, kind: ConeKind, side: Option<Side>) -> Result<ConeTerm, VariationalError> {
        let sol = match kind {
            ConeKind::Retarded => solve_retarded(self.partner, t1, x1),
            ConeKind::Advanced => solve_advanced(self.partner, t1, x1),
        }
        .map_err(|e| match e {
            LightconeError::NoBracket { .. } => VariationalError::CoverageGap { t1, kind },
            other => other.into(),
        })?;
        let v2 = match side {
            Some(s) if sol.at_breakpoint => sol.kinematics_from(self.partner, s)?.vel,
            _ => sol.vel,
        };
        let d = x1 - sol.pos;
        let r = d.norm();
        if !(r >= self.min_separation) {
            return Err(VariationalError::Collision { t1, distance: r });
        }
        let rho = match kind {
            ConeKind::Retarded => r - d.dot(v2),
            ConeKind::Advanced => r + d.dot(v2),
        };
        Ok(ConeTerm { t2: sol.t_cone, x2: sol.pos, v2, r, rho, segment: sol.segment })
    }

    fn kinetic(&self, v1: Vec3) -> f64 {
        -self.mass1 * (1.0 - v1.norm_sq()).sqrt()
    }

    /// Interaction part of `L` at `(t1, x1, v1)`.
    pub fn interaction_lagrangian(&self, t1: f64, x1: Vec3, v1: Vec3) -> Result<f64, VariationalError> {
        if self.coupling == 0.0 {
            return Ok(0.0);
        }
        let mut acc = 0.0;
        for kind in [ConeKind::Retarded, ConeKind::Advanced] {
            let c = self.cone(t1, x1, kind, None)?;
            acc += (1.0 - v1.dot(c.v2)) / (2.0 * c.rho);
        }
        Ok(self.coupling * acc)
    }

    pub fn lagrangian(&self, t1: f64, x1: Vec3, v1: Vec3) -> Result<f64, VariationalError> {
        Ok(self.kinetic(v1) + self.interaction_lagrangian(t1, x1, v1)?)
    }

    /// Partner part of `dL/dv1`, `-c sum v2 / (2 rho)`, with one-sided partner data.
    pub fn partner_current(&self, t1: f64, x1: Vec3, side: Side) -> Result<Vec3, VariationalError> {
        if self.coupling == 0.0 {
            return Ok(Vec3::ZERO);
        }
        let mut acc = Vec3::ZERO;
        for kind in [ConeKind::Retarded, ConeKind::Advanced] {
            let c = self.cone(t1, x1, kind, Some(side))?;
            acc += c.v2 / (2.0 * c.rho);
        }
        Ok(acc * -self.coupling)
    }

    /// `dL/dv1 = m v1 / sqrt(1 - v1^2) - c sum v2 / (2 rho)`.
    pub fn current(&self, t1: f64, x1: Vec3, v1: Vec3, side: Side) -> Result<Vec3, VariationalError> {
        Ok(kinetic_momentum(self.mass1, v1) + self.partner_current(t1, x1, side)?)
    }
}

/// `m v / sqrt(1 - v^2)`.
pub fn kinetic_momentum(mass: f64, v: Vec3) -> Vec3 {
    v * (mass / (1.0 - v.norm_sq()).sqrt())
}

/// Action over trajectory 1's node path.
pub struct ActionFunctional<'a> {
    boundary: &'a BoundaryConfig,
    rule: GaussRule,
    partner_breaks: Vec<f64>,
}

impl<'a> ActionFunctional<'a> {
    pub fn new(boundary: &'a BoundaryConfig, points: usize) -> ActionFunctional<'a> {
        ActionFunctional { boundary, rule: GaussRule::new(points.max(1)), partner_breaks: boundary.partner.breakpoints().collect() }
    }

    /// Times in `(ta, tb)` at which either partner cone of the straight piece
    /// crosses a partner breakpoint.
    fn panel_cuts(&self, ta: f64, xa: Vec3, tb: f64, v: Vec3) -> Result<Vec<f64>, VariationalError> {
        let inter = self.boundary.interaction();
        let mut cuts = Vec::new();
        for kind in [ConeKind::Retarded, ConeKind::Advanced] {
            let cone_time = |t: f64| inter.cone(t, xa + v * (t - ta), kind, None).map(|c| c.t2);
            let (ca, cb) = (cone_time(ta)?, cone_time(tb)?);
            let lo = self.partner_breaks.partition_point(|&b| b <= ca);
            let hi = self.partner_breaks.partition_point(|&b| b < cb);
            for &target in &self.partner_breaks[lo..hi] {
                let (mut a, mut b) = (ta, tb);
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    if mid <= a || mid >= b {
                        break;
                    }
                    if cone_time(mid)? < target {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                cuts.push(0.5 * (a + b));
            }
        }
        cuts.sort_by(f64::total_cmp);
        Ok(cuts)
    }

    /// Contribution of the straight piece `(ta, xa) -> (tb, xb)`; `interval`
    /// only labels errors.
    pub fn interval_action(&self, interval: usize, ta: f64, xa: Vec3, tb: f64, xb: Vec3, rule: &GaussRule) -> Result<f64, VariationalError> {
        let v = (xb - xa) / (tb - ta);
        let speed = v.norm();
        if !(speed < 1.0) {
            return Err(VariationalError::Superluminal { interval, speed });
        }
        let inter = self.boundary.interaction();
        let kinetic = inter.kinetic(v) * (tb - ta);
        if inter.coupling == 0.0 {
            return Ok(kinetic);
        }
        let mut knots = vec![ta];
        knots.extend(self.panel_cuts(ta, xa, tb, v)?);
        knots.push(tb);
        let mut acc = 0.0;
        for w in knots.windows(2) {
            if w[1] > w[0] {
                acc += rule.integrate(w[0], w[1], |t| inter.interaction_lagrangian(t, xa + v * (t - ta), v))?;
            }
        }
        Ok(kinetic + acc)
    }

    fn piece(&self, path: &DiscretizedPath, i: usize, rule: &GaussRule) -> Result<f64, VariationalError> {
        let (t, x) = (&path.node_times, &path.node_positions);
        self.interval_action(i, t[i], x[i], t[i + 1], x[i + 1], rule)
    }

    pub fn value_with(&self, path: &DiscretizedPath, rule: &GaussRule) -> Result<f64, VariationalError> {
        (0..path.len() - 1).map(|i| self.piece(path, i, rule)).sum()
    }

    pub fn value(&self, path: &DiscretizedPath) -> Result<f64, VariationalError> {
        self.value_with(path, &self.rule)
    }

    /// Action of the two pieces adjacent to interior node `i` with that node at `xi`.
    fn local(&self, path: &DiscretizedPath, i: usize, xi: Vec3) -> Result<f64, VariationalError> {
        let (t, x) = (&path.node_times, &path.node_positions);
        Ok(self.interval_action(i - 1, t[i - 1], x[i - 1], t[i], xi, &self.rule)?
            + self.interval_action(i, t[i], xi, t[i + 1], x[i + 1], &self.rule)?)
    }

    /// Central difference of the local action along `e` at step `h`.
    fn central(&self, path: &DiscretizedPath, i: usize, e: Vec3, h: f64) -> Result<f64, VariationalError> {
        let x = path.node_positions[i];
        Ok((self.local(path, i, x + e * h)? - self.local(path, i, x - e * h)?) / (2.0 * h))
    }

    /// Richardson-extrapolated central difference with base step `h`.
    pub fn directional_derivative(&self, path: &DiscretizedPath, i: usize, e: Vec3, h: f64) -> Result<f64, VariationalError> {
        let d1 = self.central(path, i, e, h)?;
        let d2 = self.central(path, i, e, 0.5 * h)?;
        Ok((4.0 * d2 - d1) / 3.0)
    }

    /// Gradient over interior nodes at relative step `rel_step`.
    pub fn gradient(&self, path: &DiscretizedPath, rel_step: f64) -> Result<Vec<Vec3>, VariationalError> {
        let n = path.len();
        let jobs: Vec<(usize, usize)> = (1..n - 1).flat_map(|i| (0..3).map(move |c| (i, c))).collect();
        let parts: Vec<f64> = jobs
            .par_iter()
            .map(|&(i, c)| {
                let e = [Vec3::X, Vec3::Y, Vec3::Z][c];
                let xc = path.node_positions[i].to_array()[c];
                self.directional_derivative(path, i, e, rel_step * (1.0 + xc.abs()))
            })
            .collect::<Result<_, _>>()?;
        Ok(parts.chunks(3).map(|g| Vec3::new(g[0], g[1], g[2])).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActionValue {
    pub value: f64,
    /// `|S(2k points) - S(k points)|`.
    pub quadrature_error_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionEvaluation {
    pub value: f64,
    /// One entry per interior node.
    pub gradient: Vec<Vec3>,
    pub quadrature_error_estimate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientConfig {
    /// Central-difference step relative to `1 + |x|`.
    pub relative_step: f64,
}

impl Default for GradientConfig {
    fn default() -> Self {
        GradientConfig { relative_step: 1e-6 }
    }
}

pub fn action_s1(path: &DiscretizedPath, boundary: &BoundaryConfig) -> Result<ActionValue, VariationalError> {
    boundary.validate()?;
    path.validate(boundary)?;
    let f = ActionFunctional::new(boundary, boundary.quadrature_points);
    let value = f.value(path)?;
    let fine = f.value_with(path, &GaussRule::new(2 * boundary.quadrature_points))?;
    Ok(ActionValue { value, quadrature_error_estimate: (fine - value).abs() })
}

pub fn frechet_gradient(path: &DiscretizedPath, boundary: &BoundaryConfig, cfg: &GradientConfig) -> Result<ActionEvaluation, VariationalError> {
    let v = action_s1(path, boundary)?;
    let f = ActionFunctional::new(boundary, boundary.quadrature_points);
    Ok(ActionEvaluation { value: v.value, gradient: f.gradient(path, cfg.relative_step)?, quadrature_error_estimate: v.quadrature_error_estimate })
}

/// One-sided momentum currents of particle 1 at `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentumCurrent {
    pub t: f64,
    pub left: Vec3,
    pub right: Vec3,
    /// `right - left`.
    pub mismatch: Vec3,
}

fn currents_on(inter: &Interaction, traj1: &PiecewiseTrajectory, t: f64) -> Result<MomentumCurrent, VariationalError> {
    let x1 = traj1.position(t)?;
    let left = inter.current(t, x1, traj1.kinematics(t, Side::Left)?.vel, Side::Left)?;
    let right = inter.current(t, x1, traj1.kinematics(t, Side::Right)?.vel, Side::Right)?;
    Ok(MomentumCurrent { t, left, right, mismatch: right - left })
}

/// `dL/dv1` at `t` with one-sided particle-1 velocity and partner data.
pub fn momentum_current(system: &TwoBodySystem, side: Side, t: f64) -> Result<Vec3, VariationalError> {
    let inter = Interaction::from_system(system);
    let traj1 = &system.particle1().trajectory;
    let v1 = traj1.velocity_onesided(t, side)?;
    inter.current(t, traj1.position(t)?, v1, side)
}

/// Both one-sided currents at any `t` of trajectory 1.
pub fn momentum_currents(system: &TwoBodySystem, t: f64) -> Result<MomentumCurrent, VariationalError> {
    currents_on(&Interaction::from_system(system), &system.particle1().trajectory, t)
}

/// Current mismatch across a breakpoint of trajectory 1.
pub fn jump_mismatch(system: &TwoBodySystem, t: f64) -> Result<MomentumCurrent, VariationalError> {
    let traj1 = &system.particle1().trajectory;
    if !traj1.is_breakpoint(t, BREAKPOINT_TOLERANCE) {
        return Err(VariationalError::NotABreakpoint { t });
    }
    momentum_currents(system, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpSolution {
    pub t: f64,
    pub v_left: Vec3,
    pub v_right: Vec3,
    pub mismatch: f64,
    pub iterations: usize,
}

/// Solves `p(v_right) = target` for `p(v) = m v / sqrt(1 - v^2)` by Newton
/// steps with Jacobian `m gamma (I + gamma^2 v v^T)`, starting from `start`.
pub fn solve_kinetic_momentum(mass: f64, target: Vec3, start: Vec3) -> Result<(Vec3, usize), VariationalError> {
    let mut v = start;
    for it in 0..100 {
        let f = kinetic_momentum(mass, v) - target;
        if f.norm() <= JUMP_SOLVE_TOLERANCE * (1.0 + target.norm()) {
            return Ok((v, it));
        }
        let gamma = 1.0 / (1.0 - v.norm_sq()).sqrt();
        let j = nalgebra::Matrix3::identity() * (mass * gamma)
            + nalgebra::Vector3::new(v.x, v.y, v.z) * nalgebra::Vector3::new(v.x, v.y, v.z).transpose() * (mass * gamma.powi(3));
        let rhs = nalgebra::Vector3::new(f.x, f.y, f.z);
        let step = j.lu().solve(&rhs).ok_or(VariationalError::JumpSolveFailed { residual: f.norm() })?;
        let mut dv = Vec3::new(step[0], step[1], step[2]);
        // Keep the iterate subluminal.
        while (v - dv).norm() >= 1.0 {
            dv = dv * 0.5;
        }
        v -= dv;
    }
    let residual = (kinetic_momentum(mass, v) - target).norm();
    Err(VariationalError::JumpSolveFailed { residual })
}

/// Right velocity at `t` that makes the momentum current continuous, given
/// the left state of trajectory 1 and one-sided partner data.
pub fn admissible_jump(system: &TwoBodySystem, t: f64) -> Result<JumpSolution, VariationalError> {
    let inter = Interaction::from_system(system);
    let traj1 = &system.particle1().trajectory;
    let x1 = traj1.position(t)?;
    let v_left = traj1.kinematics(t, Side::Left)?.vel;
    let left = inter.current(t, x1, v_left, Side::Left)?;
    let partner_right = inter.partner_current(t, x1, Side::Right)?;
    let (v_right, iterations) = solve_kinetic_momentum(inter.mass1, left - partner_right, v_left)?;
    let right = inter.current(t, x1, v_right, Side::Right)?;
    Ok(JumpSolution { t, v_left, v_right, mismatch: (right - left).norm(), iterations })
}

fn el_residual_on(inter: &Interaction, traj1: &PiecewiseTrajectory, t1: f64) -> Result<Vec3, VariationalError> {
    let dt = EL_TIME_STEP;
    if traj1.breakpoint_distance(t1) <= dt || t1 - dt < traj1.start() || t1 + dt > traj1.end() {
        return Err(VariationalError::BreakpointInStencil { t: t1 });
    }
    let k = traj1.kinematics(t1, Side::Left)?;
    let segments = |t: f64, x: Vec3| -> Result<[usize; 2], VariationalError> {
        Ok([inter.cone(t, x, ConeKind::Retarded, None)?.segment, inter.cone(t, x, ConeKind::Advanced, None)?.segment])
    };
    let reference = segments(t1, k.pos)?;
    let mut grad = [0.0; 3];
    let dx = EL_POSITION_STEP * (1.0 + k.pos.norm());
    for (c, e) in [Vec3::X, Vec3::Y, Vec3::Z].into_iter().enumerate() {
        let (xp, xm) = (k.pos + e * dx, k.pos - e * dx);
        if segments(t1, xp)? != reference || segments(t1, xm)? != reference {
            return Err(VariationalError::BreakpointInStencil { t: t1 });
        }
        grad[c] = (inter.interaction_lagrangian(t1, xp, k.vel)? - inter.interaction_lagrangian(t1, xm, k.vel)?) / (2.0 * dx);
    }
    let current_at = |t: f64| -> Result<Vec3, VariationalError> {
        let kk = traj1.kinematics(t, Side::Left)?;
        if segments(t, kk.pos)? != reference {
            return Err(VariationalError::BreakpointInStencil { t: t1 });
        }
        inter.current(t, kk.pos, kk.vel, Side::Left)
    };
    let dp = (current_at(t1 + dt)? - current_at(t1 - dt)?) / (2.0 * dt);
    Ok(Vec3::from(grad) - dp)
}

/// `dL/dx1 - d/dt dL/dv1` for particle 1 at a smooth time `t1`; the position
/// gradient includes the motion of both partner cones.
pub fn euler_lagrange_residual(system: &TwoBodySystem, t1: f64) -> Result<Vec3, VariationalError> {
    el_residual_on(&Interaction::from_system(system), &system.particle1().trajectory, t1)
}

/// C2 cubic through the nodes with zero end curvature.
pub fn natural_spline(times: &[f64], points: &[Vec3]) -> Result<PiecewiseTrajectory, VariationalError> {
    let n = times.len();
    if n < 3 {
        return Ok(PiecewiseTrajectory::polygon(times, points)?);
    }
    let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    // Second derivatives M with M_0 = M_{n-1} = 0, Thomas algorithm.
    let m = n - 2;
    let mut diag: Vec<f64> = (0..m).map(|i| 2.0 * (h[i] + h[i + 1])).collect();
    let mut rhs: Vec<Vec3> = (0..m)
        .map(|i| ((points[i + 2] - points[i + 1]) / h[i + 1] - (points[i + 1] - points[i]) / h[i]) * 6.0)
        .collect();
    for i in 1..m {
        let w = h[i] / diag[i - 1];
        diag[i] -= w * h[i];
        let prev = rhs[i - 1];
        rhs[i] -= prev * w;
    }
    let mut curv = vec![Vec3::ZERO; n];
    for i in (0..m).rev() {
        let next = if i + 1 < m { curv[i + 2] * h[i + 1] } else { Vec3::ZERO };
        curv[i + 1] = (rhs[i] - next) / diag[i];
    }
    let mut vel = Vec::with_capacity(n);
    for i in 0..n - 1 {
        vel.push((points[i + 1] - points[i]) / h[i] - (curv[i] * 2.0 + curv[i + 1]) * (h[i] / 6.0));
    }
    let last = n - 2;
    vel.push((points[n - 1] - points[last]) / h[last] + (curv[last] + curv[n - 1] * 2.0) * (h[last] / 6.0));
    Ok(PiecewiseTrajectory::hermite(times, points, &vel)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtremizeConfig {
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    pub relative_step: f64,
    pub armijo: f64,
    pub max_halvings: usize,
}

impl Default for ExtremizeConfig {
    fn default() -> Self {
        ExtremizeConfig { gradient_tolerance: 1e-7, max_iterations: 500, relative_step: 1e-6, armijo: 1e-4, max_halvings: 60 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElSample {
    pub t: f64,
    pub residual: Vec3,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremizeReport {
    pub iterations: usize,
    pub converged: bool,
    pub action: f64,
    pub gradient_norms: Vec<f64>,
    pub final_gradient_norm: f64,
    /// Residuals of the C2 spline through the final nodes at interior midpoints.
    pub el_residuals: Vec<ElSample>,
    /// Current continuity at each interior node of the final path.
    pub jump_mismatches: Vec<MomentumCurrent>,
}

fn flatten(g: &[Vec3]) -> Vec<f64> {
    g.iter().flat_map(|v| v.to_array()).collect()
}

fn with_interior(path: &DiscretizedPath, z: &[f64]) -> DiscretizedPath {
    let mut out = path.clone();
    for (i, c) in z.chunks(3).enumerate() {
        out.node_positions[i + 1] = Vec3::new(c[0], c[1], c[2]);
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes the discrete action over interior nodes by BFGS with Armijo
/// backtracking; endpoints are never touched.
pub fn extremize(
    boundary: &BoundaryConfig,
    initial: &DiscretizedPath,
    cfg: &ExtremizeConfig,
) -> Result<(DiscretizedPath, ExtremizeReport), VariationalError> {
    boundary.validate()?;
    initial.validate(boundary)?;
    let f = ActionFunctional::new(boundary, boundary.quadrature_points);
    let mut path = initial.clone();
    let dim = 3 * (path.len() - 2);
    let mut value = f.value(&path)?;
    let mut g = flatten(&f.gradient(&path, cfg.relative_step)?);
    let mut norms = vec![inf_norm(&g)];
    let mut hinv = identity(dim);
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = dim == 0 || inf_norm(&g) < cfg.gradient_tolerance;
    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let mut dir: Vec<f64> = (0..dim).map(|i| -dot(&hinv[i], &g)).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            hinv = identity(dim);
            dir = g.iter().map(|x| -x).collect();
            slope = dot(&g, &dir);
        }
        if fresh {
            // Scale the first step to a modest node displacement.
            let s = 1e-2 / inf_norm(&dir).max(1e-300);
            if s < 1.0 {
                dir.iter_mut().for_each(|d| *d *= s);
                slope *= s;
            }
        }
        let z: Vec<f64> = flatten(&path.node_positions[1..path.len() - 1]);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..cfg.max_halvings {
            let trial_z: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + alpha * d).collect();
            let trial = with_interior(&path, &trial_z);
            match f.value(&trial) {
                Ok(v) if v <= value + cfg.armijo * alpha * slope => {
                    accepted = Some((trial, trial_z, v));
                    break;
                }
                Ok(_) | Err(VariationalError::Superluminal { .. }) | Err(VariationalError::Collision { .. }) => alpha *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((trial, trial_z, v)) = accepted else {
            if fresh {
                return Err(VariationalError::LineSearchFailure { iteration: iterations });
            }
            hinv = identity(dim);
            fresh = true;
            continue;
        };
        let g_new = flatten(&f.gradient(&trial, cfg.relative_step)?);
        let s: Vec<f64> = trial_z.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if fresh {
                let scale = sy / dot(&y, &y);
                hinv = identity(dim).into_iter().map(|row| row.into_iter().map(|x| x * scale).collect()).collect();
            }
            bfgs_update(&mut hinv, &s, &y, sy);
        }
        fresh = false;
        path = trial;
        value = v;
        g = g_new;
        norms.push(inf_norm(&g));
        converged = inf_norm(&g) < cfg.gradient_tolerance;
    }

    let mut jump_mismatches = Vec::new();
    let mut el_residuals = Vec::new();
    let inter = boundary.interaction();
    let poly = path.trajectory()?;
    for i in 1..path.len() - 1 {
        jump_mismatches.push(currents_on(&inter, &poly, path.node_times[i])?);
    }
    let spline = natural_spline(&path.node_times, &path.node_positions)?;
    for i in 1..path.len().saturating_sub(2) {
        let t = 0.5 * (path.node_times[i] + path.node_times[i + 1]);
        if let Ok(r) = el_residual_on(&inter, &spline, t) {
            el_residuals.push(ElSample { t, residual: r, norm: r.norm() });
        }
    }
    let report = ExtremizeReport {
        iterations,
        converged,
        action: value,
        final_gradient_norm: *norms.last().unwrap_or(&0.0),
        gradient_norms: norms,
        el_residuals,
        jump_mismatches,
    };
    Ok((path, report))
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Euler-Lagrange residual of the spline through `path` at `t`, against the boundary partner.
pub fn path_el_residual(boundary: &BoundaryConfig, path: &DiscretizedPath, t: f64) -> Result<Vec3, VariationalError> {
    let spline = natural_spline(&path.node_times, &path.node_positions)?;
    el_residual_on(&boundary.interaction(), &spline, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{ParticleSpec, TwoBodySystem};

    fn static_boundary(coupling: f64) -> BoundaryConfig {
        let partner = PiecewiseTrajectory::constant(Vec3::new(-1.0, 0.0, 0.0), -10.0, 10.0).unwrap();
        let x = Vec3::new(1.0, 0.0, 0.0);
        BoundaryConfig { coupling, ..BoundaryConfig::new(0.0, 1.0, x, x, partner) }
    }

    #[test]
    fn static_pair_action_closed_form() {
        let b = static_boundary(-1.0);
        let path = DiscretizedPath::straight(&b, 4);
        let s = action_s1(&path, &b).unwrap();
        assert!((s.value + 1.5).abs() < 1e-12, "{}", s.value);
        assert!(s.quadrature_error_estimate < 1e-12);
        let s0 = action_s1(&path, &static_boundary(0.0)).unwrap();
        assert_eq!(s0.value, -1.0);
    }

    #[test]
    fn free_straight_line_is_exact() {
        let partner = PiecewiseTrajectory::constant(Vec3::new(5.0, 0.0, 0.0), -10.0, 20.0).unwrap();
        let b = BoundaryConfig { coupling: 0.0, ..BoundaryConfig::new(0.0, 2.0, Vec3::ZERO, Vec3::new(0.6, 0.8, 0.0), partner) };
        let path = DiscretizedPath::straight(&b, 7);
        let v = 0.5f64;
        let s = action_s1(&path, &b).unwrap().value;
        assert!((s + (1.0 - v * v).sqrt() * 2.0).abs() < 1e-14);
    }

    #[test]
    fn static_gradient_has_no_transverse_part() {
        let b = static_boundary(-1.0);
        let path = DiscretizedPath::straight(&b, 4);
        let g = frechet_gradient(&path, &b, &GradientConfig::default()).unwrap();
        assert_eq!(g.gradient.len(), 3);
        for v in &g.gradient {
            assert!(v.y.abs() < 1e-9 && v.z.abs() < 1e-9, "{v:?}");
        }
        let free = static_boundary(0.0);
        let g = frechet_gradient(&path, &free, &GradientConfig::default()).unwrap();
        assert!(g.gradient.iter().all(|v| v.norm() < 1e-9));
    }

    #[test]
    fn path_and_boundary_validation() {
        let b = static_boundary(-1.0);
        let mut path = DiscretizedPath::straight(&b, 3);
        path.node_positions[3].x += 1e-15;
        assert!(matches!(action_s1(&path, &b), Err(VariationalError::InvalidPath(_))));
        let mut path = DiscretizedPath::straight(&b, 3);
        path.node_positions[1] = Vec3::new(3.0, 0.0, 0.0);
        assert!(matches!(action_s1(&path, &b), Err(VariationalError::Superluminal { interval: 0, .. })));
        let short = BoundaryConfig { partner: PiecewiseTrajectory::constant(-Vec3::X, -0.5, 0.5).unwrap(), ..b };
        assert!(matches!(short.validate(), Err(VariationalError::CoverageGap { .. })));
    }

    #[test]
    fn collision_reported() {
        let partner = PiecewiseTrajectory::constant(Vec3::ZERO, -10.0, 10.0).unwrap();
        let b = BoundaryConfig::new(0.0, 1.0, Vec3::new(1e-8, 0.0, 0.0), Vec3::new(1e-8, 0.0, 0.0), partner);
        assert!(matches!(b.validate(), Err(VariationalError::Collision { .. })));
    }

    fn system(x1: PiecewiseTrajectory, x2: PiecewiseTrajectory, q: f64) -> TwoBodySystem {
        TwoBodySystem::new(ParticleSpec::new(q, 1.0, x1).unwrap(), ParticleSpec::new(-q, 1.0, x2).unwrap()).unwrap()
    }

    #[test]
    fn static_pair_el_residual_is_coulomb_like() {
        let sys = TwoBodySystem::static_pair(Vec3::X, -Vec3::X, -10.0, 10.0).unwrap();
        let r = euler_lagrange_residual(&sys, 0.0).unwrap();
        assert!((r.norm() - 0.25).abs() < 1e-8, "{r:?}");
        // Static term c / r gives dL/dx1 = -c (x1 - x2) / r^3.
        assert!((r - Vec3::new(0.25, 0.0, 0.0)).norm() < 1e-8);
        let free = system(
            PiecewiseTrajectory::uniform(Vec3::ZERO, Vec3::new(0.3, 0.1, 0.0), -10.0, 10.0).unwrap(),
            PiecewiseTrajectory::constant(Vec3::new(5.0, 0.0, 0.0), -20.0, 20.0).unwrap(),
            0.0,
        );
        assert!(euler_lagrange_residual(&free, 0.5).unwrap().norm() < 1e-12);
    }

    #[test]
    fn current_cases() {
        let sys = TwoBodySystem::static_pair(Vec3::X, -Vec3::X, -10.0, 10.0).unwrap();
        assert_eq!(momentum_current(&sys, Side::Left, 0.0).unwrap(), Vec3::ZERO);
        let free = system(
            PiecewiseTrajectory::uniform(Vec3::ZERO, Vec3::new(0.6, 0.0, 0.0), -1.0, 1.0).unwrap(),
            PiecewiseTrajectory::constant(Vec3::new(5.0, 5.0, 0.0), -20.0, 20.0).unwrap(),
            0.0,
        );
        let p = momentum_current(&free, Side::Right, 0.0).unwrap();
        assert!((p - Vec3::new(0.75, 0.0, 0.0)).norm() < 1e-15);
        // Particle 1 at rest and a moving partner: only partner terms remain.
        let moving = system(
            PiecewiseTrajectory::constant(Vec3::X, -10.0, 10.0).unwrap(),
            PiecewiseTrajectory::uniform(-Vec3::X, Vec3::new(0.0, 0.2, 0.0), -20.0, 20.0).unwrap(),
            1.0,
        );
        let inter = Interaction::from_system(&moving);
        let p = momentum_current(&moving, Side::Left, 0.0).unwrap();
        assert_eq!(p, inter.partner_current(0.0, Vec3::X, Side::Left).unwrap());
        assert!(p.norm() > 0.0);
    }

    #[test]
    fn jump_mismatch_strictness() {
        let sys = TwoBodySystem::static_pair(Vec3::X, -Vec3::X, -10.0, 10.0).unwrap();
        assert!(matches!(jump_mismatch(&sys, 0.3), Err(VariationalError::NotABreakpoint { .. })));
        let coll = PiecewiseTrajectory::polygon(&[-5.0, 0.0, 5.0], &[Vec3::new(0.5, 0.0, 0.0), Vec3::X, Vec3::new(1.5, 0.0, 0.0)]).unwrap();
        let sys = system(coll, PiecewiseTrajectory::constant(-Vec3::X, -20.0, 20.0).unwrap(), 1.0);
        let m = jump_mismatch(&sys, 0.0).unwrap();
        assert!(m.mismatch.norm() < 1e-15);
    }

    #[test]
    fn kinetic_momentum_inverse() {
        let target = kinetic_momentum(1.3, Vec3::new(0.3, -0.5, 0.6));
        let (v, _) = solve_kinetic_momentum(1.3, target, Vec3::ZERO).unwrap();
        assert!((v - Vec3::new(0.3, -0.5, 0.6)).norm() < 1e-12);
    }

    #[test]
    fn spline_interpolates_and_is_c2() {
        let times = [0.0, 0.3, 0.7, 1.0, 1.6];
        let pts = [Vec3::ZERO, Vec3::new(0.1, 0.05, 0.0), Vec3::new(0.15, 0.2, 0.0), Vec3::new(0.1, 0.3, 0.01), Vec3::new(0.0, 0.35, 0.0)];
        let s = natural_spline(&times, &pts).unwrap();
        for (t, p) in times.iter().zip(&pts) {
            assert!((s.position(*t).unwrap() - *p).norm() < 1e-14);
        }
        for &t in &times[1..4] {
            let l = s.acceleration_onesided(t, Side::Left).unwrap();
            let r = s.acceleration_onesided(t, Side::Right).unwrap();
            assert!((l - r).norm() < 1e-12);
        }
        assert!(s.acceleration_onesided(0.0, Side::Right).unwrap().norm() < 1e-12);
    }

    #[test]
    fn free_particle_extremizes_to_straight_line() {
        let partner = PiecewiseTrajectory::constant(Vec3::new(5.0, 0.0, 0.0), -10.0, 20.0).unwrap();
        let b = BoundaryConfig { coupling: 0.0, ..BoundaryConfig::new(0.0, 1.0, Vec3::ZERO, Vec3::new(0.3, 0.2, 0.0), partner) };
        let straight = DiscretizedPath::straight(&b, 6);
        let mut start = straight.clone();
        start.node_positions[2] += Vec3::new(0.02, -0.01, 0.03);
        start.node_positions[4] += Vec3::new(-0.01, 0.02, 0.0);
        let cfg = ExtremizeConfig { gradient_tolerance: 1e-10, ..ExtremizeConfig::default() };
        let (out, report) = extremize(&b, &start, &cfg).unwrap();
        assert!(report.converged);
        assert_eq!(out.node_positions[0].to_array(), b.x_start.to_array());
        assert_eq!(out.node_positions[6].to_array(), b.x_end.to_array());
        for (a, s) in out.node_positions.iter().zip(&straight.node_positions) {
            assert!((*a - *s).norm() < 1e-8);
        }
    }
}
