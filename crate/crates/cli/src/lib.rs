//! Subcommands of the `wfed` binary: each reads JSON inputs, runs one
//! analysis and writes JSON reports (plus CSV for bulk samples) into the
//! output directory.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use wfed_core::fields::{flux_samples, FarFieldEvaluator, FieldError, FieldOptions, SphereTime, DEFAULT_EXCLUDED_BOUND, DEFAULT_EXCLUSION_RADIUS};
use wfed_core::io::{self, LoadError, SystemJson, FORMAT_VERSION};
use wfed_core::lightcone::LightconeError;
use wfed_core::ndde::{solve_steps, NddeError};
use wfed_core::nonradiating::{build_sewing_chain, gah_samples, summarize_gah, GahOptions, NonradiatingError};
use wfed_core::quadrature::{SphereQuadrature, DEFAULT_PHI_NODES, DEFAULT_THETA_NODES};
use wfed_core::system::{SystemError, TwoBodySystem};
use wfed_core::trajectory::TrajectoryError;
use wfed_core::variational::{
    action_s1, admissible_jump, extremize, frechet_gradient, momentum_currents, ExtremizeConfig, GradientConfig, VariationalError,
    BREAKPOINT_TOLERANCE,
};
use wfed_core::Direction;

pub mod exit {
    pub const OK: i32 = 0;
    /// Unreadable, malformed or invalid input, and output I/O failures.
    pub const INPUT: i32 = 2;
    pub const LIGHTCONE: i32 = 3;
    pub const FIELDS: i32 = 4;
    pub const NONRADIATING: i32 = 5;
    pub const NDDE: i32 = 6;
    pub const VARIATIONAL: i32 = 7;
}

/// Error with its exit code and a stable identifier for `error[...]` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub ident: String,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "error[{}]: {}", self.ident, self.message)
    }
}

impl std::error::Error for CliError {}

/// Innermost variant name of a nested error's `Debug` form, e.g.
/// `Field(TooManyExcluded { .. })` gives `TooManyExcluded`.
fn variant_name(debug: &str) -> String {
    let mut rest = debug;
    loop {
        let end = rest.find(|c: char| !c.is_alphanumeric() && c != '_').unwrap_or(rest.len());
        let name = &rest[..end];
        let tail = &rest[end..];
        match tail.strip_prefix('(') {
            Some(inner) if inner.starts_with(|c: char| c.is_ascii_uppercase()) => rest = inner,
            _ => return name.to_string(),
        }
    }
}

fn cli_error(code: i32, e: &(impl std::fmt::Debug + std::fmt::Display)) -> CliError {
    CliError { code, ident: variant_name(&format!("{e:?}")), message: e.to_string() }
}

impl CliError {
    pub fn input(ident: &str, message: impl Into<String>) -> CliError {
        CliError { code: exit::INPUT, ident: ident.into(), message: message.into() }
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        cli_error(exit::INPUT, &e)
    }
}

impl From<SystemError> for CliError {
    fn from(e: SystemError) -> Self {
        cli_error(exit::INPUT, &e)
    }
}

impl From<TrajectoryError> for CliError {
    fn from(e: TrajectoryError) -> Self {
        cli_error(exit::LIGHTCONE, &e)
    }
}

impl From<LightconeError> for CliError {
    fn from(e: LightconeError) -> Self {
        cli_error(exit::LIGHTCONE, &e)
    }
}

impl From<FieldError> for CliError {
    fn from(e: FieldError) -> Self {
        match e {
            FieldError::Lightcone(inner) => inner.into(),
            other => cli_error(exit::FIELDS, &other),
        }
    }
}

impl From<NonradiatingError> for CliError {
    fn from(e: NonradiatingError) -> Self {
        match e {
            NonradiatingError::Field(inner) => inner.into(),
            NonradiatingError::Lightcone(inner) => inner.into(),
            NonradiatingError::Trajectory(inner) => inner.into(),
            NonradiatingError::System(inner) => inner.into(),
            e @ (NonradiatingError::InvalidSpec(_) | NonradiatingError::Superluminal { .. }) => cli_error(exit::INPUT, &e),
            other => cli_error(exit::NONRADIATING, &other),
        }
    }
}

impl From<NddeError> for CliError {
    fn from(e: NddeError) -> Self {
        let code = if matches!(e, NddeError::InvalidProblem(_)) { exit::INPUT } else { exit::NDDE };
        cli_error(code, &e)
    }
}

impl From<VariationalError> for CliError {
    fn from(e: VariationalError) -> Self {
        match e {
            VariationalError::Lightcone(inner) => inner.into(),
            VariationalError::Trajectory(inner) => inner.into(),
            e @ (VariationalError::InvalidPath(_) | VariationalError::InvalidBoundary(_) | VariationalError::Superluminal { .. }) => {
                cli_error(exit::INPUT, &e)
            }
            other => cli_error(exit::VARIATIONAL, &other),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "wfed", version, about = "Two-body action-at-a-distance toolkit")]
pub struct Cli {
    /// RunConfig JSON.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for randomized sampling; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a sewing-chain orbit from its spec and write system.json.
    BuildOrbit { spec: PathBuf },
    /// Flux of the combined far field through a sphere.
    Flux {
        system: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        t: f64,
        /// Sphere radius; without it both cones use the reduced time `t`.
        #[arg(long)]
        radius: Option<f64>,
    },
    /// Residuals of the combined retarded field over seeded (t, n) samples.
    CheckGah { system: PathBuf },
    /// Exact method of steps for a delay test equation.
    Ndde { problem: PathBuf },
    /// Action of a node path, optionally with its gradient.
    Action {
        boundary: PathBuf,
        path: PathBuf,
        #[arg(long)]
        gradient: bool,
    },
    /// Extremize a node path with fixed endpoints.
    Extremize { boundary: PathBuf, path: PathBuf },
    /// One-sided momentum currents of particle 1.
    Momentum {
        system: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        t: f64,
        /// Also solve for the right velocity that removes the mismatch.
        #[arg(long)]
        solve_jump: bool,
    },
    /// Far fields on a uniform (theta, phi) grid.
    FieldMap {
        system: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        t: f64,
        #[arg(long)]
        radius: Option<f64>,
    },
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Tolerances, quadrature sizes and defaults shared by all subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub exclusion_radius: f64,
    pub excluded_bound: f64,
    pub theta_nodes: usize,
    pub phi_nodes: usize,
    pub gah_t_samples: usize,
    pub gah_n_samples: usize,
    pub gradient_step: f64,
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    pub ndde_samples_per_step: usize,
    /// Flux threshold relative to the largest sampled `R^2 |E_ret|^2`.
    pub flux_tolerance: f64,
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gah = GahOptions::default();
        let ext = ExtremizeConfig::default();
        RunConfig {
            exclusion_radius: DEFAULT_EXCLUSION_RADIUS,
            excluded_bound: DEFAULT_EXCLUDED_BOUND,
            theta_nodes: DEFAULT_THETA_NODES,
            phi_nodes: DEFAULT_PHI_NODES,
            gah_t_samples: gah.t_samples,
            gah_n_samples: gah.n_samples,
            gradient_step: ext.relative_step,
            gradient_tolerance: ext.gradient_tolerance,
            max_iterations: ext.max_iterations,
            ndde_samples_per_step: 20,
            flux_tolerance: 1e-6,
            seed: gah.seed,
            out: default_out(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("exclusion_radius", self.exclusion_radius),
            ("excluded_bound", self.excluded_bound),
            ("gradient_step", self.gradient_step),
            ("gradient_tolerance", self.gradient_tolerance),
            ("flux_tolerance", self.flux_tolerance),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(CliError::input("InvalidConfig", format!("{name} must be positive, got {v}")));
        }
        let counts = [
            ("theta_nodes", self.theta_nodes),
            ("phi_nodes", self.phi_nodes),
            ("gah_t_samples", self.gah_t_samples),
            ("gah_n_samples", self.gah_n_samples),
            ("ndde_samples_per_step", self.ndde_samples_per_step),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(CliError::input("InvalidConfig", format!("{name} must be positive")));
        }
        Ok(())
    }

    fn field_options(&self) -> FieldOptions {
        FieldOptions { exclusion_radius: self.exclusion_radius, excluded_bound: self.excluded_bound }
    }

    fn gah_options(&self) -> GahOptions {
        GahOptions {
            t_samples: self.gah_t_samples,
            n_samples: self.gah_n_samples,
            exclusion_radius: self.exclusion_radius,
            excluded_bound: self.excluded_bound,
            seed: self.seed,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::input("Io", format!("{}: {e}", path.display())))
}

fn load<T>(path: &Path, parse: impl FnOnce(&str) -> Result<T, LoadError>) -> Result<T, CliError> {
    parse(&read(path)?).map_err(|e| {
        let c: CliError = e.into();
        CliError { message: format!("{}: {}", path.display(), c.message), ..c }
    })
}

/// Loads the config file (if any) and applies flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => load(p, io::from_json::<RunConfig>)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Output {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Output {
    fn new(dir: &Path) -> Result<Output, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::input("Io", format!("{}: {e}", dir.display())))?;
        Ok(Output { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::input("Io", format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    /// Writes `{"version", "command", ...body}`.
    fn json(&mut self, name: &str, command: &str, body: impl Serialize) -> Result<(), CliError> {
        let mut value = serde_json::json!({ "version": FORMAT_VERSION, "command": command });
        let body = serde_json::to_value(body).map_err(|e| CliError::input("Serialize", e.to_string()))?;
        match body {
            serde_json::Value::Object(map) => value.as_object_mut().expect("object").extend(map),
            other => {
                value["result"] = other;
            }
        }
        let text = serde_json::to_string_pretty(&value).map_err(|e| CliError::input("Serialize", e.to_string()))?;
        self.write(name, &(text + "\n"))
    }

    fn csv<R: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = R>) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row).map_err(|e| CliError::input("Serialize", e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::input("Serialize", e.to_string()))?;
        self.write(name, &String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

#[derive(Serialize)]
struct FarFieldRow {
    t: f64,
    n_x: f64,
    n_y: f64,
    n_z: f64,
    e_ret_r: f64,
    e_adv_r: f64,
    poynting_n_r2: f64,
    defined: bool,
}

#[derive(Serialize)]
struct FieldMapRow {
    t: f64,
    theta: f64,
    phi: f64,
    n_x: f64,
    n_y: f64,
    n_z: f64,
    e_ret_x: f64,
    e_ret_y: f64,
    e_ret_z: f64,
    e_adv_x: f64,
    e_adv_y: f64,
    e_adv_z: f64,
    poynting_n_r2: f64,
    defined: bool,
}

#[derive(Serialize)]
struct GahRow {
    t: f64,
    n_x: f64,
    n_y: f64,
    n_z: f64,
    retarded: f64,
    advanced: f64,
    defined: bool,
}

#[derive(Serialize)]
struct NddeRow {
    t: f64,
    x: f64,
    dx: f64,
}

fn sphere_time(t: f64, radius: Option<f64>) -> Result<SphereTime, CliError> {
    match radius {
        Some(r) if !(r >= 0.0 && r.is_finite()) => Err(CliError::input("InvalidArgument", format!("radius must be non-negative, got {r}"))),
        Some(r) => Ok(SphereTime::at(t, r)),
        None => Ok(SphereTime::reduced(t)),
    }
}

fn check_time(t: f64) -> Result<(), CliError> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(CliError::input("InvalidArgument", format!("time must be finite, got {t}")))
    }
}

/// Runs one parsed invocation; returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let cfg = resolve_config(cli)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::input("InvalidArgument", "--threads must be positive"));
        }
        // A second initialization (in-process tests) keeps the existing pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut out = Output::new(&cfg.out)?;
    match &cli.command {
        Command::BuildOrbit { spec } => {
            let spec = load(spec, io::parse_sewing_spec)?;
            let chain = build_sewing_chain(&spec)?;
            let text = serde_json::to_string_pretty(&SystemJson::from_chain(&chain)).map_err(|e| CliError::input("Serialize", e.to_string()))?;
            out.write("system.json", &(text + "\n"))?;
        }
        Command::Flux { system, t, radius } => {
            check_time(*t)?;
            let sys = load(system, io::parse_system)?;
            let quad = SphereQuadrature::product(cfg.theta_nodes, cfg.phi_nodes);
            let time = sphere_time(*t, *radius)?;
            let (report, samples) = flux_samples(&sys, time, &quad, cfg.field_options())?;
            let threshold = cfg.flux_tolerance * (report.max_field_sq + 1e-30);
            out.json(
                "flux.json",
                "flux",
                serde_json::json!({
                    "time": time,
                    "theta_nodes": cfg.theta_nodes,
                    "phi_nodes": cfg.phi_nodes,
                    "report": report,
                    "threshold": threshold,
                    "passes_threshold": report.total_flux.abs() < threshold,
                }),
            )?;
            out.csv(
                "flux_nodes.csv",
                samples.iter().map(|s| {
                    let n = s.n.vec();
                    FarFieldRow {
                        t: time.retarded,
                        n_x: n.x,
                        n_y: n.y,
                        n_z: n.z,
                        e_ret_r: s.e_ret.norm(),
                        e_adv_r: s.e_adv.norm(),
                        poynting_n_r2: s.poynting.dot(n),
                        defined: s.defined,
                    }
                }),
            )?;
        }
        Command::CheckGah { system } => {
            let sys = load(system, io::parse_system)?;
            let opts = cfg.gah_options();
            let samples = gah_samples(&sys, &opts)?;
            let report = summarize_gah(&sys, &samples, &opts)?;
            out.json("gah.json", "check-gah", serde_json::json!({ "seed": cfg.seed, "report": report }))?;
            out.csv(
                "gah_samples.csv",
                samples.iter().map(|s| {
                    let n = s.n.vec();
                    GahRow { t: s.t, n_x: n.x, n_y: n.y, n_z: n.z, retarded: s.retarded, advanced: s.advanced, defined: s.defined }
                }),
            )?;
        }
        Command::Ndde { problem } => {
            let p = load(problem, io::parse_delay_problem)?;
            let (sol, ledger) = solve_steps(&p)?;
            out.json("ndde.json", "ndde", serde_json::json!({ "problem": p, "ledger": ledger, "solution": sol }))?;
            let per = cfg.ndde_samples_per_step;
            let rows = (0..sol.pieces.len()).flat_map(|k| {
                let sol = &sol;
                (1..=per).map(move |j| {
                    let t = (k as f64 + j as f64 / per as f64) * sol.delay;
                    NddeRow { t, x: sol.eval(t), dx: sol.derivative(1, t) }
                })
            });
            out.csv("ndde_solution.csv", rows)?;
        }
        Command::Action { boundary, path, gradient } => {
            let b = load(boundary, io::parse_boundary)?;
            let p = load(path, io::parse_path)?;
            if *gradient {
                let eval = frechet_gradient(&p, &b, &GradientConfig { relative_step: cfg.gradient_step })?;
                out.json("action.json", "action", eval)?;
            } else {
                out.json("action.json", "action", action_s1(&p, &b)?)?;
            }
        }
        Command::Extremize { boundary, path } => {
            let b = load(boundary, io::parse_boundary)?;
            let p = load(path, io::parse_path)?;
            let ecfg = ExtremizeConfig {
                gradient_tolerance: cfg.gradient_tolerance,
                max_iterations: cfg.max_iterations,
                relative_step: cfg.gradient_step,
                ..ExtremizeConfig::default()
            };
            let (result, report) = extremize(&b, &p, &ecfg)?;
            out.json("path.json", "extremize", &result)?;
            out.json("extremize.json", "extremize", &report)?;
        }
        Command::Momentum { system, t, solve_jump } => {
            check_time(*t)?;
            let sys = load(system, io::parse_system)?;
            let currents = momentum_currents(&sys, *t)?;
            let breakpoint = sys.particle1().trajectory.is_breakpoint(*t, BREAKPOINT_TOLERANCE);
            let jump = if *solve_jump { Some(admissible_jump(&sys, *t)?) } else { None };
            out.json(
                "momentum.json",
                "momentum",
                serde_json::json!({
                    "currents": currents,
                    "mismatch_norm": currents.mismatch.norm(),
                    "breakpoint": breakpoint,
                    "jump": jump,
                }),
            )?;
        }
        Command::FieldMap { system, t, radius } => {
            check_time(*t)?;
            let sys = load(system, io::parse_system)?;
            let time = sphere_time(*t, *radius)?;
            field_map(&mut out, &sys, time, &cfg)?;
        }
    }
    Ok(out.written)
}

fn field_map(out: &mut Output, sys: &TwoBodySystem, time: SphereTime, cfg: &RunConfig) -> Result<(), CliError> {
    use rayon::prelude::*;
    let eval = FarFieldEvaluator::new(sys, cfg.field_options());
    let (nt, np) = (cfg.theta_nodes, cfg.phi_nodes);
    let grid: Vec<(f64, f64)> = (0..nt)
        .flat_map(|i| {
            (0..np).map(move |j| {
                let theta = std::f64::consts::PI * (i as f64 + 0.5) / nt as f64;
                (theta, std::f64::consts::TAU * j as f64 / np as f64)
            })
        })
        .collect();
    let rows: Vec<FieldMapRow> = grid
        .par_iter()
        .map(|&(theta, phi)| {
            let n = Direction::from_angles(theta, phi);
            let v = n.vec();
            let row = |e_ret: wfed_core::Vec3, e_adv: wfed_core::Vec3, p: f64, defined: bool| FieldMapRow {
                t: time.retarded,
                theta,
                phi,
                n_x: v.x,
                n_y: v.y,
                n_z: v.z,
                e_ret_x: e_ret.x,
                e_ret_y: e_ret.y,
                e_ret_z: e_ret.z,
                e_adv_x: e_adv.x,
                e_adv_y: e_adv.y,
                e_adv_z: e_adv.z,
                poynting_n_r2: p,
                defined,
            };
            match eval.sample(time, n) {
                Ok(s) => Ok(row(s.e_ret, s.e_adv, s.poynting.dot(v), s.defined)),
                Err(FieldError::Lightcone(LightconeError::NoBracket { .. })) => {
                    Ok(row(wfed_core::Vec3::ZERO, wfed_core::Vec3::ZERO, 0.0, false))
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_, _>>()?;
    let defined = rows.iter().filter(|r| r.defined).count();
    out.json(
        "field_map.json",
        "field-map",
        serde_json::json!({ "time": time, "theta_nodes": nt, "phi_nodes": np, "nodes": rows.len(), "defined": defined }),
    )?;
    out.csv("field_map.csv", rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names() {
        assert_eq!(variant_name("Field(TooManyExcluded { excluded: 3 })"), "TooManyExcluded");
        assert_eq!(variant_name("InvalidSpec(\"x\")"), "InvalidSpec");
        assert_eq!(variant_name("Lightcone(NoBracket { start: 0.0 })"), "NoBracket");
        assert_eq!(variant_name("DegenerateInterval"), "DegenerateInterval");
    }

    #[test]
    fn error_codes() {
        let e: CliError = NonradiatingError::Superluminal { particle: 1, t_start: 0.0, t_end: 1.0, speed: 1.2 }.into();
        assert_eq!((e.code, e.ident.as_str()), (exit::INPUT, "Superluminal"));
        let e: CliError = NonradiatingError::Field(FieldError::BreakpointInStencil { t: 0.0 }).into();
        assert_eq!(e.code, exit::FIELDS);
        let e: CliError = NddeError::DegreeOverflow { step: 1, degree: 17, max: 16 }.into();
        assert_eq!(e.code, exit::NDDE);
        let e: CliError = VariationalError::NotABreakpoint { t: 0.0 }.into();
        assert_eq!(e.code, exit::VARIATIONAL);
        assert_eq!(e.to_string(), "error[NotABreakpoint]: t = 0 is not a breakpoint of trajectory 1");
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig::default().validate().is_ok());
        let bad = RunConfig { excluded_bound: 0.0, ..RunConfig::default() };
        assert_eq!(bad.validate().unwrap_err().code, exit::INPUT);
        let cfg: RunConfig = io::from_json(r#"{"seed": 7}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.theta_nodes, DEFAULT_THETA_NODES);
    }
}
