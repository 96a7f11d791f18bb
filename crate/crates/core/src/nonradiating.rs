//! Non-radiating two-body orbits: polygonal sewing chains, the retarded-field
//! cancellation check, the per-interval dipole decomposition of the separation
//! seen along a far direction, and the algebraic consequences of that
//! decomposition (the `K12` rigidity argument and the general-solution data).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{e_ret_far, FieldError};
use crate::lightcone::{solve_advanced, solve_retarded, solve_retarded_far, LightconeError, LightconeSolution};
use crate::system::{ParticleSpec, SystemError, TwoBodySystem};
use crate::trajectory::{PiecewiseTrajectory, TrajectoryError};
use crate::vec3::{Direction, Vec3};

/// Jumps of one particle closer than this are treated as the same event.
pub const JUMP_COINCIDENCE: f64 = 1e-12;
/// Fixed-point tolerance on induced jump times, relative to `1 + |t|`.
pub const CHAIN_TOLERANCE: f64 = 1e-13;
pub const CHAIN_MAX_ITERATIONS: usize = 200;
/// Fraction of the partner jump handed to each induced jump, with opposite sign.
pub const DEFAULT_TRANSFER: f64 = 0.5;
pub const DEFAULT_GAH_EXCLUDED_BOUND: f64 = 0.05;
pub const MIN_GAH_SAMPLES: usize = 100;
/// Samples per interval closer than this to an interval end are discarded.
pub const DIPOLE_EDGE_MARGIN: f64 = 1e-9;
pub const MAX_DIPOLE_CONDITION: f64 = 1e12;
pub const RIGIDITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NonradiatingError {
    #[error("jump times {first} and {second} of particle {particle} coincide")]
    CausalityLoop { particle: usize, first: f64, second: f64 },
    #[error("particle {particle} would move at speed {speed} on ({t_start}, {t_end}]")]
    Superluminal { particle: usize, t_start: f64, t_end: f64, speed: f64 },
    #[error("induced jump times did not converge after {iterations} iterations (last change {change:e})")]
    NotConverged { iterations: usize, change: f64 },
    #[error("invalid sewing-chain spec: {0}")]
    InvalidSpec(String),
    #[error("{excluded} of {total} samples excluded (fraction {fraction}, bound {bound})")]
    TooManyExcluded { excluded: usize, total: usize, fraction: f64, bound: f64 },
    #[error("need at least {needed} (t, n) samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("far window [{lo}, {hi}] is empty; extend the trajectory domains")]
    EmptyWindow { lo: f64, hi: f64 },
    #[error("interval {sigma} does not exist; direction has {count} intervals")]
    IntervalOutOfRange { sigma: usize, count: usize },
    #[error("dipole fit degenerate: {usable} usable samples, condition number {condition:e}")]
    FitDegenerate { usable: usize, condition: f64 },
    #[error("stencil around t1 = {t} crosses a breakpoint cone time")]
    BreakpointInStencil { t: f64 },
    #[error("directions do not span space (need 3 non-coplanar, got {count})")]
    DegenerateDirections { count: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Lightcone(#[from] LightconeError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Which partner cone a particle-1 jump is matched to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartnerRule {
    /// Retarded cone: the partner jumps in the past.
    Backward,
    /// Advanced cone: the partner jumps in the future.
    Forward,
    /// Both cones from the base jumps; each branch then keeps its direction.
    Symmetric,
}

fn default_transfer() -> f64 {
    DEFAULT_TRANSFER
}

fn default_charge() -> f64 {
    crate::system::DEFAULT_CHARGE
}

fn default_masses() -> [f64; 2] {
    [crate::system::DEFAULT_MASS; 2]
}

fn default_depth() -> usize {
    1
}

/// Polygonal two-body orbit description.
///
/// Particle 1 has velocities `jump_velocities[i]` between consecutive
/// `base_jump_times`; particle 2 starts with `partner_velocity`. Every jump of
/// either particle induces a jump `-transfer * delta` on the other one at the
/// matching cone time, for `chain_depth` generations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SewingChainSpec {
    #[serde(default)]
    pub base_jump_times: Vec<f64>,
    #[serde(default)]
    pub jump_velocities: Vec<Vec3>,
    pub partner_rule: PartnerRule,
    #[serde(default = "default_depth")]
    pub chain_depth: usize,
    pub initial_positions: [Vec3; 2],
    /// Time at which `initial_positions` hold.
    #[serde(default)]
    pub anchor_time: f64,
    #[serde(default)]
    pub partner_velocity: Vec3,
    #[serde(default = "default_transfer")]
    pub transfer: f64,
    #[serde(default)]
    pub domain: Option<[f64; 2]>,
    #[serde(default = "default_charge")]
    pub charge: f64,
    #[serde(default = "default_masses")]
    pub masses: [f64; 2],
}

impl SewingChainSpec {
    pub fn validate(&self) -> Result<(), NonradiatingError> {
        let bad = |m: String| Err(NonradiatingError::InvalidSpec(m));
        if self.base_jump_times.iter().any(|t| !t.is_finite()) {
            return bad("base_jump_times must be finite".into());
        }
        if let Some(i) = self.base_jump_times.windows(2).position(|w| w[0] >= w[1]) {
            return bad(format!("base_jump_times not strictly increasing at index {}", i + 1));
        }
        let n = self.base_jump_times.len();
        if !(self.jump_velocities.len() == n + 1 || (n == 0 && self.jump_velocities.is_empty())) {
            return bad(format!("expected {} jump_velocities, got {}", n + 1, self.jump_velocities.len()));
        }
        if let Some((i, v)) = self.jump_velocities.iter().enumerate().find(|(_, v)| !(v.is_finite() && v.norm() < 1.0)) {
            let (a, b) = self.base_interval(i);
            return Err(NonradiatingError::Superluminal { particle: 1, t_start: a, t_end: b, speed: v.norm() });
        }
        if !(self.partner_velocity.is_finite() && self.partner_velocity.norm() < 1.0) {
            return Err(NonradiatingError::Superluminal {
                particle: 2,
                t_start: f64::NEG_INFINITY,
                t_end: f64::INFINITY,
                speed: self.partner_velocity.norm(),
            });
        }
        if self.chain_depth == 0 {
            return bad("chain_depth must be at least 1".into());
        }
        if !self.transfer.is_finite() {
            return bad("transfer must be finite".into());
        }
        if !(self.anchor_time.is_finite() && self.initial_positions.iter().all(|p| p.is_finite())) {
            return bad("initial positions and anchor_time must be finite".into());
        }
        if self.initial_positions[0] == self.initial_positions[1] {
            return bad("initial positions coincide".into());
        }
        if let Some([a, b]) = self.domain {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return bad(format!("domain [{a}, {b}] is not an interval"));
            }
            if !(self.anchor_time >= a && self.anchor_time <= b) {
                return bad(format!("anchor_time {} outside domain [{a}, {b}]", self.anchor_time));
            }
        }
        Ok(())
    }

    fn base_interval(&self, i: usize) -> (f64, f64) {
        let t = &self.base_jump_times;
        let a = if i == 0 { f64::NEG_INFINITY } else { t[i - 1] };
        let b = t.get(i).copied().unwrap_or(f64::INFINITY);
        (a, b)
    }

    /// Explicit domain, or the jump span padded by four separations plus one.
    pub fn resolved_domain(&self) -> (f64, f64) {
        if let Some([a, b]) = self.domain {
            return (a, b);
        }
        let pad = 4.0 * ((self.initial_positions[0] - self.initial_positions[1]).norm() + 1.0);
        let lo = self.base_jump_times.first().copied().unwrap_or(self.anchor_time).min(self.anchor_time);
        let hi = self.base_jump_times.last().copied().unwrap_or(self.anchor_time).max(self.anchor_time);
        let depth = self.chain_depth as f64;
        (lo - pad * depth.max(1.0), hi + pad * depth.max(1.0))
    }
}

/// How a jump entered the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JumpOrigin {
    Base,
    /// Placed on the partner's advanced cone; alters the velocity after the jump.
    Forward,
    /// Placed on the partner's retarded cone; alters the velocity before the jump.
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainJump {
    /// 1 or 2.
    pub particle: usize,
    pub time: f64,
    /// `v(t+) - v(t-)`.
    pub delta: Vec3,
    pub origin: JumpOrigin,
    pub generation: usize,
    pub parent: Option<usize>,
}

/// A constructed sewing chain with its jump ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct SewingChain {
    pub system: TwoBodySystem,
    pub jumps: Vec<ChainJump>,
}

struct ChainState<'a> {
    spec: &'a SewingChainSpec,
    domain: (f64, f64),
    jumps: Vec<ChainJump>,
    active: Vec<bool>,
}

impl ChainState<'_> {
    fn velocity(&self, particle: usize, t: f64) -> Vec3 {
        let spec = self.spec;
        let mut v = if particle == 1 {
            let i = spec.base_jump_times.partition_point(|&tb| tb < t);
            spec.jump_velocities.get(i).copied().unwrap_or(Vec3::ZERO)
        } else {
            spec.partner_velocity
        };
        for (j, jump) in self.jumps.iter().enumerate() {
            if !self.active[j] || jump.particle != particle {
                continue;
            }
            match jump.origin {
                JumpOrigin::Forward if jump.time < t => v += jump.delta,
                JumpOrigin::Backward if jump.time > t => v -= jump.delta,
                _ => {}
            }
        }
        v
    }

    fn trajectory(&self, particle: usize) -> Result<PiecewiseTrajectory, NonradiatingError> {
        let (t0, t1) = self.domain;
        let mut knots: Vec<f64> = self
            .jumps
            .iter()
            .zip(&self.active)
            .filter(|(j, &a)| a && j.particle == particle && j.time > t0 && j.time < t1)
            .map(|(j, _)| j.time)
            .collect();
        knots.sort_by(f64::total_cmp);
        if let Some(w) = knots.windows(2).find(|w| w[1] - w[0] <= JUMP_COINCIDENCE) {
            return Err(NonradiatingError::CausalityLoop { particle, first: w[0], second: w[1] });
        }
        knots.insert(0, t0);
        knots.push(t1);
        let vels: Vec<Vec3> = knots.windows(2).map(|w| self.velocity(particle, 0.5 * (w[0] + w[1]))).collect();
        for (w, v) in knots.windows(2).zip(&vels) {
            let speed = v.norm();
            if !(speed < 1.0) {
                return Err(NonradiatingError::Superluminal { particle, t_start: w[0], t_end: w[1], speed });
            }
        }
        // Integrate outwards from the anchor.
        let anchor = self.spec.anchor_time;
        let x_anchor = self.spec.initial_positions[particle - 1];
        let k = knots.partition_point(|&t| t <= anchor).clamp(1, knots.len() - 1) - 1;
        let mut points = vec![Vec3::ZERO; knots.len()];
        points[k] = x_anchor - vels[k] * (anchor - knots[k]);
        for i in k..vels.len() {
            points[i + 1] = points[i] + vels[i] * (knots[i + 1] - knots[i]);
        }
        for i in (0..k).rev() {
            points[i] = points[i + 1] - vels[i] * (knots[i + 1] - knots[i]);
        }
        Ok(PiecewiseTrajectory::polygon(&knots, &points)?)
    }

    /// Cone time on the other particle of jump `parent`, or `None` if it leaves the domain.
    fn child_time(&self, trajs: &[PiecewiseTrajectory; 2], parent: usize, origin: JumpOrigin) -> Result<Option<f64>, NonradiatingError> {
        let p = &self.jumps[parent];
        let own = &trajs[p.particle - 1];
        let other = &trajs[2 - p.particle];
        let x = own.position(p.time)?;
        let sol = match origin {
            JumpOrigin::Forward => solve_advanced(other, p.time, x),
            _ => solve_retarded(other, p.time, x),
        };
        match sol {
            Ok(s) if s.t_cone > self.domain.0 && s.t_cone < self.domain.1 => Ok(Some(s.t_cone)),
            Ok(_) | Err(LightconeError::NoBracket { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn trajectories(&self) -> Result<[PiecewiseTrajectory; 2], NonradiatingError> {
        Ok([self.trajectory(1)?, self.trajectory(2)?])
    }

    fn deactivate_descendants(&mut self, root: usize) {
        self.active[root] = false;
        let mut changed = true;
        while changed {
            changed = false;
            for j in 0..self.jumps.len() {
                if self.active[j] && self.jumps[j].parent.is_some_and(|p| !self.active[p]) {
                    self.active[j] = false;
                    changed = true;
                }
            }
        }
    }
}

/// Builds the polygonal orbit described by `spec`.
///
/// Induced jump times depend on the trajectories they modify, so after the
/// generations are laid out the times are iterated to a fixed point; the map
/// contracts because both particles are subluminal.
pub fn build_sewing_chain(spec: &SewingChainSpec) -> Result<SewingChain, NonradiatingError> {
    spec.validate()?;
    let domain = spec.resolved_domain();
    let mut state = ChainState { spec, domain, jumps: Vec::new(), active: Vec::new() };
    for (i, &t) in spec.base_jump_times.iter().enumerate() {
        let delta = spec.jump_velocities[i + 1] - spec.jump_velocities[i];
        state.jumps.push(ChainJump { particle: 1, time: t, delta, origin: JumpOrigin::Base, generation: 0, parent: None });
        state.active.push(t > domain.0 && t < domain.1);
    }

    let mut frontier: Vec<usize> = (0..state.jumps.len()).filter(|&j| state.active[j]).collect();
    for generation in 1..=spec.chain_depth {
        let trajs = state.trajectories()?;
        let mut next = Vec::new();
        for &parent in &frontier {
            let origins: &[JumpOrigin] = match (state.jumps[parent].origin, spec.partner_rule) {
                (JumpOrigin::Base, PartnerRule::Forward) => &[JumpOrigin::Forward],
                (JumpOrigin::Base, PartnerRule::Backward) => &[JumpOrigin::Backward],
                (JumpOrigin::Base, PartnerRule::Symmetric) => &[JumpOrigin::Backward, JumpOrigin::Forward],
                (JumpOrigin::Forward, _) => &[JumpOrigin::Forward],
                (JumpOrigin::Backward, _) => &[JumpOrigin::Backward],
            };
            for &origin in origins {
                if let Some(time) = state.child_time(&trajs, parent, origin)? {
                    let p = state.jumps[parent];
                    next.push(state.jumps.len());
                    state.jumps.push(ChainJump {
                        particle: 3 - p.particle,
                        time,
                        delta: p.delta * -spec.transfer,
                        origin,
                        generation,
                        parent: Some(parent),
                    });
                    state.active.push(true);
                }
            }
        }
        frontier = next;
    }

    let mut change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < CHAIN_MAX_ITERATIONS {
        iterations += 1;
        let trajs = state.trajectories()?;
        change = 0.0;
        for j in 0..state.jumps.len() {
            let (Some(parent), true) = (state.jumps[j].parent, state.active[j]) else { continue };
            if !state.active[parent] {
                continue;
            }
            match state.child_time(&trajs, parent, state.jumps[j].origin)? {
                Some(t) => {
                    let old = state.jumps[j].time;
                    change = f64::max(change, (t - old).abs() / (1.0 + old.abs()));
                    state.jumps[j].time = t;
                }
                None => {
                    state.deactivate_descendants(j);
                    change = f64::INFINITY;
                }
            }
        }
        if change <= CHAIN_TOLERANCE {
            break;
        }
    }
    if change > CHAIN_TOLERANCE {
        return Err(NonradiatingError::NotConverged { iterations, change });
    }

    let [x1, x2] = state.trajectories()?;
    let system = TwoBodySystem::new(
        ParticleSpec::new(spec.charge, spec.masses[0], x1)?,
        ParticleSpec::new(-spec.charge, spec.masses[1], x2)?,
    )?;
    let jumps = state.jumps.into_iter().zip(state.active).filter_map(|(j, a)| a.then_some(j)).collect();
    Ok(SewingChain { system, jumps })
}

/// Median, 95th percentile and maximum of a residual sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualStats {
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

impl ResidualStats {
    pub fn from_values(values: &mut [f64]) -> ResidualStats {
        if values.is_empty() {
            return ResidualStats { median: f64::NAN, p95: f64::NAN, max: f64::NAN };
        }
        values.sort_by(f64::total_cmp);
        let n = values.len();
        let rank = |q: f64| values[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
        let median = if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) };
        ResidualStats { median, p95: rank(0.95), max: values[n - 1] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GahOptions {
    pub t_samples: usize,
    pub n_samples: usize,
    pub exclusion_radius: f64,
    pub excluded_bound: f64,
    pub seed: u64,
}

impl Default for GahOptions {
    fn default() -> Self {
        GahOptions {
            t_samples: 40,
            n_samples: 25,
            exclusion_radius: crate::fields::DEFAULT_EXCLUSION_RADIUS,
            excluded_bound: DEFAULT_GAH_EXCLUDED_BOUND,
            seed: 0,
        }
    }
}

/// One `(t, n)` probe of the retarded-field cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GahSample {
    pub t: f64,
    pub n: Direction,
    /// `R |E1_ret + E2_ret|`.
    pub retarded: f64,
    /// `R |E1_adv + E2_adv|` at the same reduced time.
    pub advanced: f64,
    pub defined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GahReport {
    pub retarded: ResidualStats,
    pub advanced: ResidualStats,
    pub excluded_fraction: f64,
    pub samples: usize,
    pub window: (f64, f64),
}

/// Seeded `(t, n)` grid: `t_samples` uniform times in the far window, each
/// paired with `n_samples` uniform random directions.
pub fn gah_sample_points(window: (f64, f64), opts: &GahOptions) -> Vec<(f64, Direction)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::with_capacity(opts.t_samples * opts.n_samples);
    for _ in 0..opts.t_samples {
        let t = rng.gen_range(window.0..window.1);
        for _ in 0..opts.n_samples {
            out.push((t, random_direction(&mut rng)));
        }
    }
    out
}

pub fn random_direction<R: Rng + ?Sized>(rng: &mut R) -> Direction {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    Direction::from_angles(z.acos(), phi)
}

/// Per-sample residuals of the combined far fields.
pub fn gah_samples(system: &TwoBodySystem, opts: &GahOptions) -> Result<Vec<GahSample>, NonradiatingError> {
    let total = opts.t_samples * opts.n_samples;
    if total < MIN_GAH_SAMPLES {
        return Err(NonradiatingError::TooFewSamples { needed: MIN_GAH_SAMPLES, got: total });
    }
    let window = system.far_window();
    if !(window.0 < window.1) {
        return Err(NonradiatingError::EmptyWindow { lo: window.0, hi: window.1 });
    }
    let eval = crate::fields::FarFieldEvaluator::new(
        system,
        crate::fields::FieldOptions { exclusion_radius: opts.exclusion_radius, excluded_bound: opts.excluded_bound },
    );
    let points = gah_sample_points(window, opts);
    points
        .par_iter()
        .map(|&(t, n)| {
            let (er, dr) = eval.e_ret_total(t, n)?;
            let (ea, da) = eval.e_adv_total(t, n)?;
            Ok(GahSample { t, n, retarded: er.norm(), advanced: ea.norm(), defined: dr && da })
        })
        .collect()
}

/// Samples the cancellation `E1_ret + E2_ret = 0` over random far events,
/// skipping events whose cone times sit within the exclusion radius of a
/// breakpoint.
pub fn check_gah(system: &TwoBodySystem, opts: &GahOptions) -> Result<GahReport, NonradiatingError> {
    let samples = gah_samples(system, opts)?;
    summarize_gah(system, &samples, opts)
}

pub fn summarize_gah(system: &TwoBodySystem, samples: &[GahSample], opts: &GahOptions) -> Result<GahReport, NonradiatingError> {
    let mut ret: Vec<f64> = samples.iter().filter(|s| s.defined).map(|s| s.retarded).collect();
    let mut adv: Vec<f64> = samples.iter().filter(|s| s.defined).map(|s| s.advanced).collect();
    let excluded = samples.len() - ret.len();
    let fraction = excluded as f64 / samples.len().max(1) as f64;
    if fraction > opts.excluded_bound {
        return Err(NonradiatingError::TooManyExcluded { excluded, total: samples.len(), fraction, bound: opts.excluded_bound });
    }
    Ok(GahReport {
        retarded: ResidualStats::from_values(&mut ret),
        advanced: ResidualStats::from_values(&mut adv),
        excluded_fraction: fraction,
        samples: samples.len(),
        window: system.far_window(),
    })
}

/// Reduced times `u` at which a cone time along `n` crosses a breakpoint of
/// either particle, merged with the far-window ends: the interval boundaries
/// `t_sigma` of the dipole decomposition.
pub fn dipole_intervals(system: &TwoBodySystem, n: Direction) -> Vec<(f64, f64)> {
    let (lo, hi) = system.far_window();
    if !(lo < hi) {
        return Vec::new();
    }
    let nv = n.vec();
    let mut cuts: Vec<f64> = vec![lo, hi];
    for p in system.particles() {
        let tr = &p.trajectory;
        for tb in tr.breakpoints() {
            let u = tb - nv.dot(tr.position(tb).expect("breakpoint inside domain"));
            if u > lo && u < hi {
                cuts.push(u);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|b, a| (*b - *a).abs() <= JUMP_COINCIDENCE);
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DipoleSample {
    pub t: f64,
    pub t1: f64,
    pub t2: f64,
    /// `f_sigma(t, n) = n.(x1 - x2) - (t - t_sigma) n.V_sigma`.
    pub f: f64,
}

/// Least-squares fit of `x1(t1-) - x2(t2-) = D + n f + (t - t_sigma) V` on one interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DipoleDecomposition {
    pub n: Direction,
    pub sigma: usize,
    pub t_sigma: f64,
    pub t_next: f64,
    /// Transverse to `n`.
    pub d_sigma: Vec3,
    pub v_sigma: Vec3,
    pub samples: Vec<DipoleSample>,
    /// Largest transverse misfit over the samples.
    pub fit_residual: f64,
    pub condition_number: f64,
}

impl DipoleDecomposition {
    /// `f_sigma` from its defining relation at a sample, for consistency checks.
    pub fn f_from_cones(&self, s: &DipoleSample) -> f64 {
        (s.t1 - s.t2) - (s.t - self.t_sigma) * self.n.vec().dot(self.v_sigma)
    }
}

fn cone_separation(system: &TwoBodySystem, u: f64, n: Direction) -> Result<(LightconeSolution, LightconeSolution), NonradiatingError> {
    let a = solve_retarded_far(&system.particle1().trajectory, u, n, None)?;
    let b = solve_retarded_far(&system.particle2().trajectory, u, n, None)?;
    Ok((a, b))
}

/// Fits the dipole form on interval `sigma` of [`dipole_intervals`] from
/// `t_samples` evenly spaced interior times.
pub fn decompose_dipole(system: &TwoBodySystem, n: Direction, sigma: usize, t_samples: usize) -> Result<DipoleDecomposition, NonradiatingError> {
    let intervals = dipole_intervals(system, n);
    let &(a, b) = intervals.get(sigma).ok_or(NonradiatingError::IntervalOutOfRange { sigma, count: intervals.len() })?;
    let times: Vec<f64> = (0..t_samples)
        .map(|j| a + (b - a) * (j as f64 + 0.5) / t_samples as f64)
        .filter(|&t| t - a > DIPOLE_EDGE_MARGIN && b - t > DIPOLE_EDGE_MARGIN)
        .collect();
    fit_dipole(system, n, sigma, a, b, &times, true)
}

fn fit_dipole(
    system: &TwoBodySystem,
    n: Direction,
    sigma: usize,
    a: f64,
    b: f64,
    times: &[f64],
    with_drift: bool,
) -> Result<DipoleDecomposition, NonradiatingError> {
    let m = times.len();
    if m < 4 {
        return Err(NonradiatingError::FitDegenerate { usable: m, condition: f64::INFINITY });
    }
    let mut cones = Vec::with_capacity(m);
    for &t in times {
        cones.push(cone_separation(system, t, n)?);
    }
    let cols = if with_drift { 2 } else { 1 };
    // Unit-scaled abscissa keeps the design matrix well conditioned.
    let scale = (b - a).max(f64::MIN_POSITIVE);
    let design = DMatrix::from_fn(m, cols, |i, j| if j == 0 { 1.0 } else { (times[i] - a) / scale });
    let sv = design.clone().singular_values();
    let condition = sv.max() / sv.min();
    if !(condition < MAX_DIPOLE_CONDITION) {
        return Err(NonradiatingError::FitDegenerate { usable: m, condition });
    }
    let qr = design.clone().qr();
    let mut coef = [[0.0; 3]; 2];
    for comp in 0..3 {
        let rhs = DVector::from_fn(m, |i, _| {
            let d = cones[i].0.pos - cones[i].1.pos;
            d.to_array()[comp]
        });
        let qtb = qr.q().transpose() * rhs;
        let sol = qr
            .r()
            .solve_upper_triangular(&qtb)
            .ok_or(NonradiatingError::FitDegenerate { usable: m, condition })?;
        for j in 0..cols {
            coef[j][comp] = sol[j];
        }
    }
    let c0 = Vec3::from(coef[0]);
    let c1 = Vec3::from(coef[1]) / scale;
    let d_sigma = n.transverse(c0);
    let nv = n.vec();
    let mut fit_residual: f64 = 0.0;
    let samples = times
        .iter()
        .zip(&cones)
        .map(|(&t, (c1s, c2s))| {
            let d = c1s.pos - c2s.pos;
            let misfit = n.transverse(d - d_sigma - c1 * (t - a));
            fit_residual = fit_residual.max(misfit.norm());
            DipoleSample { t, t1: c1s.t_cone, t2: c2s.t_cone, f: nv.dot(d) - (t - a) * nv.dot(c1) }
        })
        .collect();
    Ok(DipoleDecomposition {
        n,
        sigma,
        t_sigma: a,
        t_next: b,
        d_sigma,
        v_sigma: c1,
        samples,
        fit_residual,
        condition_number: condition,
    })
}

/// `A_sigma` and `B_sigma` of the general non-radiating solution tabulated
/// at the dipole samples of one interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneralSolutionData {
    pub n: Direction,
    pub sigma: usize,
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    pub a_sigma: Vec<Vec3>,
    pub b_sigma: Vec<Vec3>,
}

/// Evaluates
/// `A = (v2 - n) dt2/dt1 + n - (dt/dt1) n x (n x V)` and its mirror
/// `B = (v1 - n) dt1/dt2 + n + (dt/dt2) n x (n x V)`, with the partial
/// derivatives composed from the cone Jacobians `dt_k/dt = 1/(1 - n.v_k)`.
pub fn extract_general_solution(
    system: &TwoBodySystem,
    n: Direction,
    sigma: usize,
    samples: usize,
) -> Result<GeneralSolutionData, NonradiatingError> {
    let dec = decompose_dipole(system, n, sigma, samples)?;
    let nv = n.vec();
    let nnv = nv.cross(nv.cross(dec.v_sigma));
    let mut out = GeneralSolutionData { n, sigma, t1: Vec::new(), t2: Vec::new(), a_sigma: Vec::new(), b_sigma: Vec::new() };
    for s in &dec.samples {
        let (c1, c2) = cone_separation(system, s.t, n)?;
        let (k1, k2) = (1.0 - nv.dot(c1.vel), 1.0 - nv.dot(c2.vel));
        let dt2_dt1 = k1 / k2;
        let a = (c2.vel - nv) * dt2_dt1 + nv - nnv * k1;
        let b = (c1.vel - nv) / dt2_dt1 + nv + nnv * k2;
        out.t1.push(c1.t_cone);
        out.t2.push(c2.t_cone);
        out.a_sigma.push(a);
        out.b_sigma.push(b);
    }
    Ok(out)
}

/// Sample variance of a vector table, summed over components.
pub fn vector_variance(values: &[Vec3]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().copied().sum::<Vec3>() / values.len() as f64;
    values.iter().map(|v| (*v - mean).norm_sq()).sum::<f64>() / (values.len() - 1) as f64
}

/// Candidate `x1(t1-, n)` families built from the separation of a system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DipoleCandidate {
    /// `D_sigma(n)` and `V_sigma(n)` fitted per direction.
    Fitted,
    /// `V_sigma = 0` with `D_sigma(n)` the mean transverse separation.
    ZeroDrift,
}

/// Tangential derivatives `dx1/dn` along the two tangent directions at `n`
/// of `x1(t1-, n) = x2(t2-) + D(n) + (t1- - t2-) n - (t - t_sigma) n x (n x V(n))`.
pub fn consistency_residual(
    system: &TwoBodySystem,
    candidate: DipoleCandidate,
    t1: f64,
    n: Direction,
    h: f64,
    fit_samples: usize,
) -> Result<(Vec3, Vec3), NonradiatingError> {
    let tr1 = &system.particle1().trajectory;
    if tr1.is_breakpoint(t1, h) {
        return Err(NonradiatingError::BreakpointInStencil { t: t1 });
    }
    let x1 = tr1.position(t1)?;
    let (e1, e2) = n.tangent_basis();
    let mut reference_segment = None;
    let mut eval = |m: Direction| -> Result<Vec3, NonradiatingError> {
        let mv = m.vec();
        let u = t1 - mv.dot(x1);
        let intervals = dipole_intervals(system, m);
        let sigma = intervals
            .iter()
            .position(|&(a, b)| u > a && u <= b)
            .ok_or(NonradiatingError::BreakpointInStencil { t: t1 })?;
        let (a, b) = intervals[sigma];
        let c2 = solve_retarded_far(&system.particle2().trajectory, u, m, None)?;
        if c2.at_breakpoint || *reference_segment.get_or_insert(c2.segment) != c2.segment {
            return Err(NonradiatingError::BreakpointInStencil { t: t1 });
        }
        let times: Vec<f64> = (0..fit_samples).map(|j| a + (b - a) * (j as f64 + 0.5) / fit_samples as f64).collect();
        let dec = fit_dipole(system, m, sigma, a, b, &times, candidate == DipoleCandidate::Fitted)?;
        let v = if candidate == DipoleCandidate::Fitted { dec.v_sigma } else { Vec3::ZERO };
        Ok(c2.pos + dec.d_sigma + mv * (t1 - c2.t_cone) - mv.cross(mv.cross(v)) * (u - a))
    };
    let mut diff = |e: Vec3| -> Result<Vec3, NonradiatingError> {
        let plus = Direction::from_vec(n.vec() + e * h).expect("nonzero");
        let minus = Direction::from_vec(n.vec() - e * h).expect("nonzero");
        Ok((eval(plus)? - eval(minus)?) / (2.0 * h))
    };
    Ok((diff(e1)?, diff(e2)?))
}

/// `K12 = 1/(1 - n.v1) - 1/(1 - n.v2)`.
pub fn k12(v1: Vec3, v2: Vec3, n: Direction) -> f64 {
    let nv = n.vec();
    1.0 / (1.0 - nv.dot(v1)) - 1.0 / (1.0 - nv.dot(v2))
}

/// Residual of `v1/(1 - n.v1) - v2/(1 - n.v2) = K12 n`, which is purely transverse.
pub fn rigidity_residual(v1: Vec3, v2: Vec3, n: Direction) -> f64 {
    let nv = n.vec();
    ((v1 - nv) / (1.0 - nv.dot(v1)) - (v2 - nv) / (1.0 - nv.dot(v2))).norm()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum RigidityVerdict {
    /// Every sampled direction satisfies the relation.
    ForcedEqual { max_residual: f64 },
    Violated { direction: Direction, residual: f64 },
}

/// Checks the velocity relation with fixed `v1, v2` over a spanning set of directions.
pub fn rigidity_check(v1: Vec3, v2: Vec3, directions: &[Direction]) -> Result<RigidityVerdict, NonradiatingError> {
    let count = directions.len();
    if count < 3 {
        return Err(NonradiatingError::DegenerateDirections { count });
    }
    let gram = directions.iter().fold(nalgebra::Matrix3::<f64>::zeros(), |acc, d| {
        let v = nalgebra::Vector3::new(d.vec().x, d.vec().y, d.vec().z);
        acc + v * v.transpose()
    });
    let min_eig = gram.symmetric_eigenvalues().min();
    if !(min_eig > 1e-10 * count as f64) {
        return Err(NonradiatingError::DegenerateDirections { count });
    }
    let (worst, residual) = directions
        .iter()
        .map(|&d| (d, rigidity_residual(v1, v2, d)))
        .fold((directions[0], f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    if residual < RIGIDITY_TOLERANCE {
        Ok(RigidityVerdict::ForcedEqual { max_residual: residual })
    } else {
        Ok(RigidityVerdict::Violated { direction: worst, residual })
    }
}

/// Retarded far field of one particle, re-exported for residual reports.
pub fn particle_field(spec: &ParticleSpec, u: f64, n: Direction) -> Result<Vec3, NonradiatingError> {
    Ok(e_ret_far(spec, u, n)?.field)
}
