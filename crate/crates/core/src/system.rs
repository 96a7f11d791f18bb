//! Charged particles and the two-body system shared by every analysis.

use thiserror::Error;

use crate::trajectory::{PiecewiseTrajectory, TrajectoryError};
use crate::vec3::Vec3;

/// Default charge magnitude `q`; particle 1 carries `+q`, particle 2 `-q`.
pub const DEFAULT_CHARGE: f64 = 1.0;
/// Default particle mass.
pub const DEFAULT_MASS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("mass must be positive and finite, got {0}")]
    BadMass(f64),
    #[error("charge must be finite, got {0}")]
    BadCharge(f64),
    #[error("charges must be opposite: q1 = {q1}, q2 = {q2}")]
    ChargesNotOpposite { q1: f64, q2: f64 },
    #[error("trajectory domains [{a0}, {a1}] and [{b0}, {b1}] do not overlap")]
    DisjointDomains { a0: f64, a1: f64, b0: f64, b1: f64 },
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSpec {
    pub charge: f64,
    pub mass: f64,
    pub trajectory: PiecewiseTrajectory,
}

impl ParticleSpec {
    pub fn new(charge: f64, mass: f64, trajectory: PiecewiseTrajectory) -> Result<ParticleSpec, SystemError> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(SystemError::BadMass(mass));
        }
        if !charge.is_finite() {
            return Err(SystemError::BadCharge(charge));
        }
        Ok(ParticleSpec { charge, mass, trajectory })
    }

    pub fn time_reversed(&self) -> ParticleSpec {
        ParticleSpec { charge: self.charge, mass: self.mass, trajectory: self.trajectory.time_reversed() }
    }
}

/// Two opposite charges with overlapping trajectory domains.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoBodySystem {
    particles: [ParticleSpec; 2],
}

impl TwoBodySystem {
    pub fn new(particle1: ParticleSpec, particle2: ParticleSpec) -> Result<TwoBodySystem, SystemError> {
        let (q1, q2) = (particle1.charge, particle2.charge);
        if q1 != -q2 {
            return Err(SystemError::ChargesNotOpposite { q1, q2 });
        }
        let (a0, a1) = particle1.trajectory.domain();
        let (b0, b1) = particle2.trajectory.domain();
        if a0.max(b0) >= a1.min(b1) {
            return Err(SystemError::DisjointDomains { a0, a1, b0, b1 });
        }
        Ok(TwoBodySystem { particles: [particle1, particle2] })
    }

    /// Default charges `+-q` and unit masses.
    pub fn with_defaults(x1: PiecewiseTrajectory, x2: PiecewiseTrajectory) -> Result<TwoBodySystem, SystemError> {
        Self::new(
            ParticleSpec::new(DEFAULT_CHARGE, DEFAULT_MASS, x1)?,
            ParticleSpec::new(-DEFAULT_CHARGE, DEFAULT_MASS, x2)?,
        )
    }

    /// Two charges at rest at `p1` and `p2` on `[t0, t1]`.
    pub fn static_pair(p1: Vec3, p2: Vec3, t0: f64, t1: f64) -> Result<TwoBodySystem, SystemError> {
        Self::with_defaults(PiecewiseTrajectory::constant(p1, t0, t1)?, PiecewiseTrajectory::constant(p2, t0, t1)?)
    }

    pub fn particle1(&self) -> &ParticleSpec {
        &self.particles[0]
    }

    pub fn particle2(&self) -> &ParticleSpec {
        &self.particles[1]
    }

    pub fn particles(&self) -> &[ParticleSpec; 2] {
        &self.particles
    }

    /// Common time interval of both trajectories.
    pub fn overlap(&self) -> (f64, f64) {
        let (a0, a1) = self.particles[0].trajectory.domain();
        let (b0, b1) = self.particles[1].trajectory.domain();
        (a0.max(b0), a1.min(b1))
    }

    /// Both particles relabeled `1 <-> 2`.
    pub fn swapped(&self) -> TwoBodySystem {
        TwoBodySystem { particles: [self.particles[1].clone(), self.particles[0].clone()] }
    }

    pub fn time_reversed(&self) -> TwoBodySystem {
        TwoBodySystem { particles: [self.particles[0].time_reversed(), self.particles[1].time_reversed()] }
    }

    /// Interval of reduced far-zone times `u` for which every cone time, retarded
    /// or advanced, of every direction lands inside both trajectory domains.
    pub fn far_window(&self) -> (f64, f64) {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for p in &self.particles {
            let tr = &p.trajectory;
            let rho = tr.max_radius() * (1.0 + 1e-9) + 1e-12;
            lo = lo.max(tr.start() + rho);
            hi = hi.min(tr.end() - rho);
        }
        (lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_same_sign_charges() {
        let tr = PiecewiseTrajectory::constant(Vec3::ZERO, 0.0, 1.0).unwrap();
        let p = ParticleSpec::new(1.0, 1.0, tr.clone()).unwrap();
        assert!(matches!(TwoBodySystem::new(p.clone(), p), Err(SystemError::ChargesNotOpposite { .. })));
    }

    #[test]
    fn rejects_bad_mass() {
        let tr = PiecewiseTrajectory::constant(Vec3::ZERO, 0.0, 1.0).unwrap();
        assert!(matches!(ParticleSpec::new(1.0, 0.0, tr.clone()), Err(SystemError::BadMass(_))));
        assert!(matches!(ParticleSpec::new(1.0, f64::NAN, tr), Err(SystemError::BadMass(_))));
    }

    #[test]
    fn rejects_disjoint_domains() {
        let a = PiecewiseTrajectory::constant(Vec3::ZERO, 0.0, 1.0).unwrap();
        let b = PiecewiseTrajectory::constant(Vec3::X, 2.0, 3.0).unwrap();
        assert!(matches!(TwoBodySystem::with_defaults(a, b), Err(SystemError::DisjointDomains { .. })));
    }

    #[test]
    fn far_window_shrinks_by_orbit_radius() {
        let sys = TwoBodySystem::static_pair(Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0), -10.0, 10.0).unwrap();
        let (lo, hi) = sys.far_window();
        assert!((lo + 9.0).abs() < 1e-6 && (hi - 9.0).abs() < 1e-6);
    }
}
