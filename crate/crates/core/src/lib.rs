//! Numerical toolkit for two-body action-at-a-distance electrodynamics with
//! piecewise trajectories: light-cone solvers, far fields and flux,
//! non-radiating orbits, neutral delay test equations and the mixed-boundary
//! variational action.

pub mod fields;
pub mod io;
pub mod lightcone;
pub mod nonradiating;
pub mod ndde;
pub mod orbits;
pub mod poly;
pub mod quadrature;
pub mod system;
pub mod trajectory;
pub mod variational;
pub mod vec3;

pub use system::{ParticleSpec, TwoBodySystem};
pub use trajectory::{PiecewiseTrajectory, Segment, Side};
pub use vec3::{Direction, Vec3};
