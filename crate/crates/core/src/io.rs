//! JSON formats for trajectories, systems, sewing-chain specs, variational
//! boundaries and node paths.
//!
//! Trajectory coefficients are in each segment's local time `s = t - a`:
//!
//! ```json
//! {"domain": [t0, t1], "segments": [{"t": [a, b], "coeffs": [[x, y, z], ...]}]}
//! ```

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ndde::DelayProblem;
use crate::nonradiating::{ChainJump, SewingChain, SewingChainSpec};
use crate::system::{ParticleSpec, SystemError, TwoBodySystem, DEFAULT_CHARGE, DEFAULT_MASS};
use crate::trajectory::{PiecewiseTrajectory, TrajectoryError};
use crate::variational::{
    BoundaryConfig, DiscretizedPath, DEFAULT_COUPLING, DEFAULT_MASS1, DEFAULT_MIN_SEPARATION, DEFAULT_QUADRATURE_POINTS,
};
use crate::vec3::Vec3;

/// Format version written into every output.
pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoadError {
    /// Malformed JSON or a field of the wrong shape.
    #[error("line {line}, column {column}, at `{path}`: {message}")]
    Syntax { path: String, line: usize, column: usize, message: String },
    /// Well-formed input that violates an invariant.
    #[error("at `{path}`: {message}")]
    Invalid { path: String, message: String },
}

impl LoadError {
    pub fn path(&self) -> &str {
        match self {
            LoadError::Syntax { path, .. } | LoadError::Invalid { path, .. } => path,
        }
    }

    fn invalid(path: impl Into<String>, message: impl ToString) -> LoadError {
        LoadError::Invalid { path: path.into(), message: message.to_string() }
    }

    fn nest(self, prefix: &str) -> LoadError {
        let join = |p: String| if p.is_empty() || p == "." { prefix.to_string() } else { format!("{prefix}.{p}") };
        match self {
            LoadError::Syntax { path, line, column, message } => LoadError::Syntax { path: join(path), line, column, message },
            LoadError::Invalid { path, message } => LoadError::Invalid { path: join(path), message },
        }
    }
}

/// `serde_json` messages without their trailing position.
fn bare_message(e: &serde_json::Error) -> String {
    let text = e.to_string();
    let suffix = format!(" at line {} column {}", e.line(), e.column());
    text.strip_suffix(&suffix).unwrap_or(&text).to_string()
}

/// Deserializes with the JSON path of the failing field.
pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T, LoadError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value: T = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        LoadError::Syntax { path, line: inner.line(), column: inner.column(), message: bare_message(&inner) }
    })?;
    de.end().map_err(|e| LoadError::Syntax { path: String::new(), line: e.line(), column: e.column(), message: bare_message(&e) })?;
    Ok(value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentJson {
    pub t: [f64; 2],
    pub coeffs: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryJson {
    pub domain: [f64; 2],
    pub segments: Vec<SegmentJson>,
}

fn trajectory_error_path(e: &TrajectoryError) -> String {
    match e {
        TrajectoryError::Empty => "segments".into(),
        TrajectoryError::NonFinite { segment }
        | TrajectoryError::EmptySegment { segment, .. }
        | TrajectoryError::DegreeTooHigh { segment, .. }
        | TrajectoryError::NotContiguous { segment, .. }
        | TrajectoryError::Discontinuous { segment, .. }
        | TrajectoryError::Superluminal { segment, .. } => format!("segments[{segment}]"),
        TrajectoryError::OutOfDomain { .. } => "domain".into(),
    }
}

impl TrajectoryJson {
    pub fn from_trajectory(traj: &PiecewiseTrajectory) -> TrajectoryJson {
        TrajectoryJson {
            domain: [traj.start(), traj.end()],
            segments: traj
                .segments()
                .iter()
                .map(|s| SegmentJson { t: [s.t_start(), s.t_end()], coeffs: s.coeffs().to_vec() })
                .collect(),
        }
    }

    pub fn to_trajectory(&self) -> Result<PiecewiseTrajectory, LoadError> {
        let traj = PiecewiseTrajectory::from_pieces(self.segments.iter().map(|s| (s.t[0], s.t[1], s.coeffs.as_slice())))
            .map_err(|e| LoadError::invalid(trajectory_error_path(&e), e))?;
        if traj.domain() != (self.domain[0], self.domain[1]) {
            return Err(LoadError::invalid(
                "domain",
                format!("[{}, {}] does not match the segment span [{}, {}]", self.domain[0], self.domain[1], traj.start(), traj.end()),
            ));
        }
        Ok(traj)
    }
}

pub fn parse_trajectory(text: &str) -> Result<PiecewiseTrajectory, LoadError> {
    from_json::<TrajectoryJson>(text)?.to_trajectory()
}

fn default_charge() -> f64 {
    DEFAULT_CHARGE
}

fn default_mass() -> f64 {
    DEFAULT_MASS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleJson {
    #[serde(default = "default_charge")]
    pub charge: f64,
    #[serde(default = "default_mass")]
    pub mass: f64,
    pub trajectory: TrajectoryJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemJson {
    #[serde(default)]
    pub version: Option<String>,
    pub particles: [ParticleJson; 2],
    /// Jump ledger of a sewing chain; informational on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jumps: Option<serde_json::Value>,
}

impl SystemJson {
    pub fn from_system(system: &TwoBodySystem) -> SystemJson {
        let particle = |p: &ParticleSpec| ParticleJson {
            charge: p.charge,
            mass: p.mass,
            trajectory: TrajectoryJson::from_trajectory(&p.trajectory),
        };
        SystemJson {
            version: Some(FORMAT_VERSION.into()),
            particles: [particle(system.particle1()), particle(system.particle2())],
            jumps: None,
        }
    }

    pub fn from_chain(chain: &SewingChain) -> SystemJson {
        let jumps: Vec<ChainJump> = chain.jumps.clone();
        SystemJson { jumps: Some(serde_json::to_value(jumps).expect("jump ledger serializes")), ..Self::from_system(&chain.system) }
    }

    pub fn to_system(&self) -> Result<TwoBodySystem, LoadError> {
        let mut specs = Vec::with_capacity(2);
        for (i, p) in self.particles.iter().enumerate() {
            let prefix = format!("particles[{i}]");
            let traj = p.trajectory.to_trajectory().map_err(|e| e.nest(&format!("{prefix}.trajectory")))?;
            let spec = ParticleSpec::new(p.charge, p.mass, traj).map_err(|e| {
                let field = if matches!(e, SystemError::BadMass(_)) { "mass" } else { "charge" };
                LoadError::invalid(format!("{prefix}.{field}"), e)
            })?;
            specs.push(spec);
        }
        let p2 = specs.pop().expect("two particles");
        let p1 = specs.pop().expect("two particles");
        TwoBodySystem::new(p1, p2).map_err(|e| LoadError::invalid("particles", e))
    }
}

pub fn parse_system(text: &str) -> Result<TwoBodySystem, LoadError> {
    from_json::<SystemJson>(text)?.to_system()
}

pub fn system_to_json(system: &TwoBodySystem) -> String {
    serde_json::to_string_pretty(&SystemJson::from_system(system)).expect("system serializes")
}

/// Parses and validates a sewing-chain spec; superluminal velocities are
/// left for the builder so its error names the interval.
pub fn parse_sewing_spec(text: &str) -> Result<SewingChainSpec, LoadError> {
    from_json(text)
}

fn default_mass1() -> f64 {
    DEFAULT_MASS1
}

fn default_coupling() -> f64 {
    DEFAULT_COUPLING
}

fn default_min_separation() -> f64 {
    DEFAULT_MIN_SEPARATION
}

fn default_quadrature_points() -> usize {
    DEFAULT_QUADRATURE_POINTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryJson {
    pub t_start: f64,
    pub t_end: f64,
    pub x_start: Vec3,
    pub x_end: Vec3,
    pub partner: TrajectoryJson,
    #[serde(default = "default_mass1")]
    pub mass1: f64,
    #[serde(default = "default_coupling")]
    pub coupling: f64,
    #[serde(default = "default_min_separation")]
    pub min_separation: f64,
    #[serde(default = "default_quadrature_points")]
    pub quadrature_points: usize,
}

impl BoundaryJson {
    pub fn from_boundary(b: &BoundaryConfig) -> BoundaryJson {
        BoundaryJson {
            t_start: b.t_start,
            t_end: b.t_end,
            x_start: b.x_start,
            x_end: b.x_end,
            partner: TrajectoryJson::from_trajectory(&b.partner),
            mass1: b.mass1,
            coupling: b.coupling,
            min_separation: b.min_separation,
            quadrature_points: b.quadrature_points,
        }
    }

    /// Builds the config; partner coverage is checked by the action itself.
    pub fn to_boundary(&self) -> Result<BoundaryConfig, LoadError> {
        let partner = self.partner.to_trajectory().map_err(|e| e.nest("partner"))?;
        let checks: [(&str, bool, String); 5] = [
            ("t_end", self.t_start.is_finite() && self.t_end.is_finite() && self.t_start < self.t_end, "t_end must exceed t_start".into()),
            ("mass1", self.mass1 > 0.0 && self.mass1.is_finite(), format!("mass1 must be positive, got {}", self.mass1)),
            ("coupling", self.coupling.is_finite(), "coupling must be finite".into()),
            ("min_separation", self.min_separation > 0.0, "min_separation must be positive".into()),
            ("quadrature_points", self.quadrature_points > 0, "quadrature_points must be positive".into()),
        ];
        if let Some((field, _, msg)) = checks.iter().find(|c| !c.1) {
            return Err(LoadError::invalid(*field, msg));
        }
        Ok(BoundaryConfig {
            t_start: self.t_start,
            t_end: self.t_end,
            x_start: self.x_start,
            x_end: self.x_end,
            partner,
            mass1: self.mass1,
            coupling: self.coupling,
            min_separation: self.min_separation,
            quadrature_points: self.quadrature_points,
        })
    }
}

pub fn parse_boundary(text: &str) -> Result<BoundaryConfig, LoadError> {
    from_json::<BoundaryJson>(text)?.to_boundary()
}

/// Parses a node path; consistency with a boundary is checked separately.
pub fn parse_path(text: &str) -> Result<DiscretizedPath, LoadError> {
    let path: DiscretizedPath = from_json(text)?;
    if path.node_times.len() != path.node_positions.len() {
        return Err(LoadError::invalid(
            "node_positions",
            format!("{} positions for {} times", path.node_positions.len(), path.node_times.len()),
        ));
    }
    if let Some(i) = path.node_times.windows(2).position(|w| !(w[0] < w[1])) {
        return Err(LoadError::invalid(format!("node_times[{}]", i + 1), "node times must be strictly increasing"));
    }
    Ok(path)
}

pub fn parse_delay_problem(text: &str) -> Result<DelayProblem, LoadError> {
    let p: DelayProblem = from_json(text)?;
    p.steps().map_err(|e| LoadError::invalid("", e))?;
    Ok(p)
}
