//! Far-zone electric and magnetic fields, their time-symmetric combination,
//! the Poynting vector and its flux through a large sphere.
//!
//! All fields are stored multiplied by `R`, the sphere radius, so that the
//! trivial `1/R` fall-off never underflows and flux sums need no rescaling.
//! Observation times are reduced: the retarded fields take `u = t - R` and the
//! advanced fields `w = t + R` (see [`SphereTime`]).

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::lightcone::{solve_retarded_far, LightconeError, LightconeSolution};
use crate::quadrature::SphereQuadrature;
use crate::system::{ParticleSpec, TwoBodySystem};
use crate::vec3::{Direction, Vec3};

/// Default half-width, in time, of the undefined band around breakpoint cone times.
pub const DEFAULT_EXCLUSION_RADIUS: f64 = 1e-6;
/// Default largest fraction of excluded sphere nodes a flux report accepts.
pub const DEFAULT_EXCLUDED_BOUND: f64 = 0.05;
/// Relative size of `n . E` above which a field counts as non-transverse.
pub const TRANSVERSALITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error(transparent)]
    Lightcone(#[from] LightconeError),
    #[error("finite-difference stencil around t = {t} crosses a breakpoint cone time")]
    BreakpointInStencil { t: f64 },
    #[error("field not transverse: |n.E| = {normal:e} for |E| = {magnitude:e}")]
    TransversalityViolated { normal: f64, magnitude: f64 },
    #[error("{excluded} of {total} sphere nodes excluded (fraction {fraction}, bound {bound})")]
    TooManyExcluded { excluded: usize, total: usize, fraction: f64, bound: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldOptions {
    pub exclusion_radius: f64,
    pub excluded_bound: f64,
}

impl Default for FieldOptions {
    fn default() -> Self {
        FieldOptions { exclusion_radius: DEFAULT_EXCLUSION_RADIUS, excluded_bound: DEFAULT_EXCLUDED_BOUND }
    }
}

/// Reduced cone arguments of a sphere event `(t, R n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SphereTime {
    /// `t - R`, argument of the retarded fields.
    pub retarded: f64,
    /// `t + R`, argument of the advanced fields.
    pub advanced: f64,
}

impl SphereTime {
    pub fn at(t: f64, radius: f64) -> SphereTime {
        SphereTime { retarded: t - radius, advanced: t + radius }
    }

    /// Both cones evaluated at the same reduced time.
    pub fn reduced(t: f64) -> SphereTime {
        SphereTime { retarded: t, advanced: t }
    }
}

/// One charge's R-scaled far field with its cone solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldValue {
    pub field: Vec3,
    /// False when the cone time sits on a breakpoint (or inside the exclusion band).
    pub defined: bool,
    pub cone: LightconeSolution,
}

/// `q n x ((n - v) x a) / (1 - n.v)^3`.
pub fn lienard_wiechert_far(charge: f64, n: Direction, vel: Vec3, acc: Vec3) -> Vec3 {
    let n = n.vec();
    let k = 1.0 - n.dot(vel);
    n.cross((n - vel).cross(acc)) * (charge / (k * k * k))
}

/// Retarded far field of one charge at reduced time `u`.
pub fn e_ret_far(spec: &ParticleSpec, u: f64, n: Direction) -> Result<FieldValue, FieldError> {
    let cone = solve_retarded_far(&spec.trajectory, u, n, None)?;
    Ok(FieldValue { field: lienard_wiechert_far(spec.charge, n, cone.vel, cone.acc), defined: !cone.at_breakpoint, cone })
}

/// Advanced far field of one charge at reduced advanced time `w`, obtained as the
/// retarded field of the time-reversed worldline observed at `-w`.
///
/// Reversal flips velocities and keeps accelerations, so the retarded formula
/// applied to the reversed data is already the advanced field.
pub fn e_adv_far(spec: &ParticleSpec, w: f64, n: Direction) -> Result<FieldValue, FieldError> {
    let reversed = spec.time_reversed();
    e_adv_far_prereversed(&reversed, w, n)
}

/// [`e_adv_far`] with the reversal hoisted out; `reversed` is the reversed particle.
fn e_adv_far_prereversed(reversed: &ParticleSpec, w: f64, n: Direction) -> Result<FieldValue, FieldError> {
    let mut value = e_ret_far(reversed, -w, n)?;
    // Report the cone in the original time orientation.
    let c = &mut value.cone;
    c.t_cone = -c.t_cone;
    c.vel = -c.vel;
    c.kind = crate::lightcone::ConeKind::Advanced;
    Ok(value)
}

/// Far field from the curvature of the retarded position map,
/// `q n x (n x d^2/du^2 x(t_-(u)))`, by a second central difference of step `h`.
pub fn e_ret_far_via_curvature(spec: &ParticleSpec, u: f64, n: Direction, h: f64) -> Result<Vec3, FieldError> {
    let tr = &spec.trajectory;
    let lo = solve_retarded_far(tr, u - h, n, None)?;
    let mid = solve_retarded_far(tr, u, n, None)?;
    let hi = solve_retarded_far(tr, u + h, n, None)?;
    if lo.segment != hi.segment || lo.segment != mid.segment {
        return Err(FieldError::BreakpointInStencil { t: u });
    }
    let curvature = (hi.pos - mid.pos * 2.0 + lo.pos) / (h * h);
    let nv = n.vec();
    Ok(nv.cross(nv.cross(curvature)) * spec.charge)
}

/// Time-symmetric far magnetic field `B = 1/2 n x E_adv - 1/2 n x E_ret`.
pub fn b_far(e_ret: Vec3, e_adv: Vec3, n: Direction) -> Vec3 {
    let n = n.vec();
    n.cross(e_adv) * 0.5 - n.cross(e_ret) * 0.5
}

/// Magnetic far field accompanying a single retarded field, `B = n x E`.
pub fn b_ret_far(e_ret: Vec3, n: Direction) -> Vec3 {
    n.vec().cross(e_ret)
}

fn check_transverse(e: Vec3, n: Direction) -> Result<(), FieldError> {
    let normal = n.vec().dot(e).abs();
    let magnitude = e.norm();
    if normal > TRANSVERSALITY_TOLERANCE * magnitude {
        return Err(FieldError::TransversalityViolated { normal, magnitude });
    }
    Ok(())
}

/// `P = 1/4 (|E_adv|^2 - |E_ret|^2) n`, valid for transverse fields.
pub fn poynting(e_ret: Vec3, e_adv: Vec3, n: Direction) -> Result<Vec3, FieldError> {
    check_transverse(e_ret, n)?;
    check_transverse(e_adv, n)?;
    Ok(n.vec() * (0.25 * (e_adv.norm_sq() - e_ret.norm_sq())))
}

/// `E x B` with `E = (E_adv + E_ret) / 2` and `B` from [`b_far`]; equals
/// [`poynting`] for transverse fields.
pub fn poynting_from_fields(e_ret: Vec3, e_adv: Vec3, n: Direction) -> Vec3 {
    let e = (e_adv + e_ret) * 0.5;
    e.cross(b_far(e_ret, e_adv, n))
}

/// Combined far fields of both charges at one sphere node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FarFieldSample {
    pub time: SphereTime,
    pub n: Direction,
    pub e_ret: Vec3,
    pub e_adv: Vec3,
    pub b: Vec3,
    pub poynting: Vec3,
    pub defined: bool,
}

/// Evaluates [`FarFieldSample`]s for one system; the reversed worldlines needed
/// by the advanced fields are built once.
#[derive(Debug, Clone)]
pub struct FarFieldEvaluator<'a> {
    system: &'a TwoBodySystem,
    reversed: [ParticleSpec; 2],
    options: FieldOptions,
}

impl<'a> FarFieldEvaluator<'a> {
    pub fn new(system: &'a TwoBodySystem, options: FieldOptions) -> Self {
        let reversed = [system.particle1().time_reversed(), system.particle2().time_reversed()];
        FarFieldEvaluator { system, reversed, options }
    }

    pub fn options(&self) -> FieldOptions {
        self.options
    }

    fn excluded(&self, v: &FieldValue) -> bool {
        !v.defined || v.cone.breakpoint_distance <= self.options.exclusion_radius
    }

    /// Sum of the retarded fields of both charges and whether it is defined.
    pub fn e_ret_total(&self, u: f64, n: Direction) -> Result<(Vec3, bool), FieldError> {
        let a = e_ret_far(self.system.particle1(), u, n)?;
        let b = e_ret_far(self.system.particle2(), u, n)?;
        Ok((a.field + b.field, !(self.excluded(&a) || self.excluded(&b))))
    }

    /// Sum of the advanced fields of both charges and whether it is defined.
    pub fn e_adv_total(&self, w: f64, n: Direction) -> Result<(Vec3, bool), FieldError> {
        let a = e_adv_far_prereversed(&self.reversed[0], w, n)?;
        let b = e_adv_far_prereversed(&self.reversed[1], w, n)?;
        Ok((a.field + b.field, !(self.excluded(&a) || self.excluded(&b))))
    }

    pub fn sample(&self, time: SphereTime, n: Direction) -> Result<FarFieldSample, FieldError> {
        let (e_ret, dr) = self.e_ret_total(time.retarded, n)?;
        let (e_adv, da) = self.e_adv_total(time.advanced, n)?;
        let defined = dr && da;
        let (b, p) = if defined {
            (b_far(e_ret, e_adv, n), poynting(e_ret, e_adv, n)?)
        } else {
            (Vec3::ZERO, Vec3::ZERO)
        };
        Ok(FarFieldSample { time, n, e_ret, e_adv, b, poynting: p, defined })
    }
}

/// Flux of the Poynting vector through the far sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FluxReport {
    /// `sum w (P . n)` over defined nodes; R-scaling makes this the physical flux.
    pub total_flux: f64,
    /// `sum w |P . n|` over defined nodes.
    pub abs_flux: f64,
    /// Largest `R^2 |E_ret|^2` among defined nodes.
    pub max_field_sq: f64,
    pub excluded_fraction: f64,
    pub samples: usize,
}

/// Flux report together with the per-node samples it was reduced from.
pub fn flux_samples(
    system: &TwoBodySystem,
    time: SphereTime,
    quad: &SphereQuadrature,
    options: FieldOptions,
) -> Result<(FluxReport, Vec<FarFieldSample>), FieldError> {
    let eval = FarFieldEvaluator::new(system, options);
    let samples: Vec<FarFieldSample> = quad
        .nodes()
        .par_iter()
        .map(|node| match eval.sample(time, node.n) {
            // Cone times outside the worldline domains leave the node undefined.
            Err(FieldError::Lightcone(LightconeError::NoBracket { .. })) => Ok(FarFieldSample {
                time,
                n: node.n,
                e_ret: Vec3::ZERO,
                e_adv: Vec3::ZERO,
                b: Vec3::ZERO,
                poynting: Vec3::ZERO,
                defined: false,
            }),
            other => other,
        })
        .collect::<Result<_, _>>()?;

    // Reduction in node order keeps the result independent of thread count.
    let mut report = FluxReport { total_flux: 0.0, abs_flux: 0.0, max_field_sq: 0.0, excluded_fraction: 0.0, samples: samples.len() };
    let mut excluded = 0usize;
    for (node, s) in quad.nodes().iter().zip(&samples) {
        if !s.defined {
            excluded += 1;
            continue;
        }
        let pn = s.poynting.dot(node.n.vec());
        report.total_flux += node.weight * pn;
        report.abs_flux += node.weight * pn.abs();
        report.max_field_sq = report.max_field_sq.max(s.e_ret.norm_sq());
    }
    report.excluded_fraction = excluded as f64 / samples.len().max(1) as f64;
    if report.excluded_fraction > options.excluded_bound {
        return Err(FieldError::TooManyExcluded {
            excluded,
            total: samples.len(),
            fraction: report.excluded_fraction,
            bound: options.excluded_bound,
        });
    }
    Ok((report, samples))
}

pub fn flux(system: &TwoBodySystem, time: SphereTime, quad: &SphereQuadrature, options: FieldOptions) -> Result<FluxReport, FieldError> {
    flux_samples(system, time, quad, options).map(|(r, _)| r)
}
