//! Acceptance gate: one line per criterion, each under its runtime limit.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wfed_core::fields::{e_adv_far, e_ret_far, e_ret_far_via_curvature, flux, poynting, FieldError, FieldOptions, SphereTime};
use wfed_core::lightcone::{solve_advanced, solve_retarded, LightconeSolution};
use wfed_core::ndde::{solve_steps, DelayKind, DelayProblem, Smoothness, DEFAULT_MAX_DEGREE};
use wfed_core::nonradiating::{
    build_sewing_chain, check_gah, dipole_intervals, extract_general_solution, random_direction, rigidity_check, vector_variance,
    GahOptions, NonradiatingError, PartnerRule, RigidityVerdict, SewingChainSpec,
};
use wfed_core::orbits::{circular_pair, Circle};
use wfed_core::poly::Poly;
use wfed_core::quadrature::SphereQuadrature;
use wfed_core::variational::{
    action_s1, admissible_jump, extremize, path_el_residual, ActionFunctional, BoundaryConfig, DiscretizedPath, ExtremizeConfig,
};
use wfed_core::{Direction, PiecewiseTrajectory, Side, TwoBodySystem, Vec3};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fmt_err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn symmetric_spec(depth: usize) -> SewingChainSpec {
    SewingChainSpec {
        base_jump_times: vec![-1.0, 1.0],
        jump_velocities: vec![Vec3::new(0.1, 0.05, 0.0), Vec3::ZERO, Vec3::new(-0.1, -0.05, 0.0)],
        partner_rule: PartnerRule::Symmetric,
        chain_depth: depth,
        initial_positions: [Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)],
        anchor_time: 0.0,
        partner_velocity: Vec3::ZERO,
        transfer: 0.5,
        domain: Some([-40.0, 40.0]),
        charge: 1.0,
        masses: [1.0, 1.0],
    }
}

/// Vertices in the unit cube, 5 time units apart, so speeds stay below 0.7.
fn random_polygon(rng: &mut ChaCha8Rng) -> PiecewiseTrajectory {
    let n = rng.gen_range(2..12);
    let step = 60.0 / n as f64;
    let times: Vec<f64> = (0..=n)
        .map(|k| match k {
            0 => -30.0,
            k if k == n => 30.0,
            k => -30.0 + step * (k as f64 + rng.gen_range(-0.2..0.2)),
        })
        .collect();
    let points: Vec<Vec3> =
        (0..=n).map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * 0.5).collect();
    PiecewiseTrajectory::polygon(&times, &points).expect("subluminal polygon")
}

fn lightcone_solver() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_res, mut worst_jac, mut checked) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..100 {
        let traj = random_polygon(&mut rng);
        for retarded in [true, false] {
            let solve = |t: f64, p: Vec3| -> Result<LightconeSolution, String> {
                if retarded { solve_retarded(&traj, t, p) } else { solve_advanced(&traj, t, p) }.map_err(fmt_err)
            };
            let (t, p) = (rng.gen_range(-3.0..3.0), Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)));
            let sol = solve(t, p)?;
            let res = ((t - sol.t_cone).abs() - (p - traj.position(sol.t_cone).map_err(fmt_err)?).norm()).abs();
            worst_res = worst_res.max(res / (1.0 + t.abs()));
            let h = 1e-6;
            if sol.breakpoint_distance > 10.0 * h {
                let fd = (solve(t + h, p)?.t_cone - solve(t - h, p)?.t_cone) / (2.0 * h);
                worst_jac = worst_jac.max((fd - sol.jacobian).abs() / sol.jacobian.abs());
                checked += 1;
            }
        }
    }
    ensure(worst_res < 1e-12, || format!("cone residual {worst_res:e}"))?;
    ensure(checked >= 150, || format!("only {checked} Jacobians checked"))?;
    ensure(worst_jac < 1e-6, || format!("Jacobian relative error {worst_jac:e}"))?;
    Ok(format!("max residual {worst_res:.2e}, max Jacobian error {worst_jac:.2e} over {checked} events"))
}

fn field_form_equivalence() -> Outcome {
    let sys = circular_pair(1.0, 0.1, -200.0, 200.0, 256).map_err(fmt_err)?;
    let spec = sys.particle1();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut done) = (0.0f64, 0usize);
    while done < 100 {
        let u = rng.gen_range(-100.0..100.0);
        let n = random_direction(&mut rng);
        let curv = match e_ret_far_via_curvature(spec, u, n, 1e-3) {
            Err(FieldError::BreakpointInStencil { .. }) => continue,
            other => other.map_err(fmt_err)?,
        };
        let closed = e_ret_far(spec, u, n).map_err(fmt_err)?.field;
        worst = worst.max((curv - closed).norm() / closed.norm());
        done += 1;
    }
    ensure(worst < 1e-6, || format!("relative difference {worst:e}"))?;
    Ok(format!("max relative difference {worst:.2e} over {done} samples"))
}

fn static_null_case() -> Outcome {
    let sys = TwoBodySystem::static_pair(Vec3::X, -Vec3::X, -100.0, 100.0).map_err(fmt_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = random_direction(&mut rng);
        let t = rng.gen_range(-50.0..50.0);
        for p in sys.particles() {
            let r = e_ret_far(p, t, n).map_err(fmt_err)?.field;
            let a = e_adv_far(p, t, n).map_err(fmt_err)?.field;
            let s = poynting(r, a, n).map_err(fmt_err)?;
            worst = worst.max(r.norm()).max(a.norm()).max(s.norm());
        }
    }
    let f = flux(&sys, SphereTime::at(0.0, 50.0), &SphereQuadrature::default(), FieldOptions::default()).map_err(fmt_err)?;
    worst = worst.max(f.total_flux.abs()).max(f.abs_flux);
    ensure(worst < 1e-14, || format!("largest field quantity {worst:e}"))?;
    Ok(format!("largest field, Poynting or flux magnitude {worst:e}"))
}

fn chain_gah(depth: usize) -> Result<(TwoBodySystem, f64, f64, usize), String> {
    let chain = build_sewing_chain(&symmetric_spec(depth)).map_err(fmt_err)?;
    let report = check_gah(&chain.system, &GahOptions::default()).map_err(fmt_err)?;
    Ok((chain.system, report.retarded.median, report.excluded_fraction, report.samples))
}

fn gah_certification() -> Outcome {
    let (sys, median, excluded, samples) = chain_gah(3)?;
    ensure(samples >= 1000, || format!("{samples} samples"))?;
    ensure(median < 1e-8, || format!("median residual {median:e}"))?;
    ensure(excluded < 0.05, || format!("excluded fraction {excluded}"))?;
    let quad = SphereQuadrature::default();
    let (lo, hi) = sys.far_window();
    let mut worst_ratio = 0.0f64;
    for k in 0..5 {
        let t = lo + (hi - lo) * (k as f64 + 0.37) / 5.0;
        let f = flux(&sys, SphereTime::reduced(t), &quad, FieldOptions::default()).map_err(fmt_err)?;
        let bound = 1e-6 * (f.max_field_sq + 1e-30);
        ensure(f.total_flux.abs() < bound, || format!("flux {:e} at t = {t} above {bound:e}", f.total_flux))?;
        worst_ratio = worst_ratio.max(f.total_flux.abs() / bound);
    }
    Ok(format!("median {median:e}, excluded {excluded:.4}, {samples} samples, flux/bound <= {worst_ratio:e}"))
}

fn gah_failure_case() -> Outcome {
    let (_, chain_median, _, _) = chain_gah(3)?;
    let sys = circular_pair(1.0, 0.1, -60.0, 60.0, 256).map_err(fmt_err)?;
    let report = check_gah(&sys, &GahOptions::default()).map_err(fmt_err)?;
    let m = report.retarded.median;
    ensure(m > 1e3 * chain_median && m > 0.0, || format!("circular median {m:e} vs chain {chain_median:e}"))?;
    Ok(format!("circular median {m:.3e} against sewing-chain median {chain_median:e}"))
}

fn rigidity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dirs: Vec<Direction> = (0..64).map(|_| random_direction(&mut rng)).collect();
    let mut violated = 0;
    for _ in 0..1000 {
        let v1 = random_direction(&mut rng).vec() * rng.gen_range(0.0..0.95);
        let mut v2 = random_direction(&mut rng).vec() * rng.gen_range(0.0..0.95);
        if (v1 - v2).norm() < 1e-6 {
            v2 = v2 * 0.5;
        }
        if let RigidityVerdict::Violated { .. } = rigidity_check(v1, v2, &dirs).map_err(fmt_err)? {
            violated += 1;
        }
    }
    ensure(violated == 1000, || format!("{violated} of 1000 unequal pairs violated"))?;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let v = random_direction(&mut rng).vec() * rng.gen_range(0.0..0.95);
        match rigidity_check(v, v, &dirs).map_err(fmt_err)? {
            RigidityVerdict::ForcedEqual { max_residual } => worst = worst.max(max_residual),
            other => return Err(format!("equal velocities gave {other:?}")),
        }
    }
    ensure(worst < 1e-12, || format!("equal-velocity residual {worst:e}"))?;
    Ok(format!("1000/1000 unequal pairs violated, equal pairs max residual {worst:e}"))
}

fn general_solution() -> Outcome {
    let sys = build_sewing_chain(&symmetric_spec(3)).map_err(fmt_err)?.system;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (tr1, tr2) = (&sys.particle1().trajectory, &sys.particle2().trajectory);
    // Per-segment reference values: the first direction that reaches a segment fixes it.
    let mut ref_a: std::collections::BTreeMap<usize, Vec3> = Default::default();
    let mut ref_b: std::collections::BTreeMap<usize, Vec3> = Default::default();
    let (mut worst_var, mut worst_dep, mut intervals, mut skipped) = (0.0f64, 0.0f64, 0usize, 0usize);
    for _ in 0..50 {
        let n = random_direction(&mut rng);
        for sigma in 0..dipole_intervals(&sys, n).len() {
            let g = match extract_general_solution(&sys, n, sigma, 8) {
                Ok(g) => g,
                Err(NonradiatingError::FitDegenerate { .. }) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e.to_string()),
            };
            intervals += 1;
            worst_var = worst_var.max(vector_variance(&g.a_sigma)).max(vector_variance(&g.b_sigma));
            let seg1 = tr1.segment_index(g.t1[g.t1.len() / 2], Side::Left);
            let seg2 = tr2.segment_index(g.t2[g.t2.len() / 2], Side::Left);
            let a = g.a_sigma[0];
            let b = g.b_sigma[0];
            worst_dep = worst_dep.max((*ref_a.entry(seg1).or_insert(a) - a).norm());
            worst_dep = worst_dep.max((*ref_b.entry(seg2).or_insert(b) - b).norm());
        }
    }
    ensure(intervals > 0, || "no usable intervals".into())?;
    ensure(worst_var < 1e-16, || format!("per-interval variance {worst_var:e}"))?;
    ensure(worst_dep < 1e-8, || format!("direction dependence {worst_dep:e}"))?;
    Ok(format!("{intervals} intervals ({skipped} too short to fit), variance {worst_var:.2e}, n-dependence {worst_dep:.2e}"))
}

fn ndde_dichotomy() -> Outcome {
    let retarded = DelayProblem {
        kind: DelayKind::Retarded,
        a: 0.0,
        b: 1.0,
        delay: 1.0,
        history: Poly(vec![1.0]),
        horizon: 6.0,
        max_degree: DEFAULT_MAX_DEGREE,
    };
    let (_, ledger) = solve_steps(&retarded).map_err(fmt_err)?;
    let expected: Vec<Smoothness> = (0..=6).map(Smoothness::C).collect();
    ensure(ledger.smoothness_order == expected, || format!("retarded orders {:?}", ledger.smoothness_order))?;
    let neutral = DelayProblem { kind: DelayKind::Neutral, a: -1.0, b: 0.0, history: Poly(vec![0.0, 1.0]), ..retarded };
    let (_, ledger) = solve_steps(&neutral).map_err(fmt_err)?;
    ensure(ledger.smoothness_order.iter().all(|s| *s == Smoothness::C(0)), || format!("neutral orders {:?}", ledger.smoothness_order))?;
    ensure(ledger.jump_in_derivative.iter().all(|j| j.abs() == 2.0), || format!("jumps {:?}", ledger.jump_in_derivative))?;
    // Jumps propagate as J_{k+1} = a J_k.
    let worst = ledger.jump_in_derivative.windows(2).map(|w| (w[1] - neutral.a * w[0]).abs()).fold(0.0, f64::max);
    ensure(worst < 1e-12, || format!("recurrence defect {worst:e}"))?;
    Ok(format!("retarded C0..C6, neutral all C0 with |jump| = 2 (recurrence defect {worst:e})"))
}

fn attractive_boundary(t_end: f64) -> (BoundaryConfig, Circle) {
    let c1 = Circle { center: Vec3::ZERO, radius: 0.5, omega: 0.2, phase: 0.0 };
    let c2 = Circle { phase: std::f64::consts::PI, ..c1 };
    let partner = c2.hermite(-10.0, 12.0, 256).expect("hermite circle");
    (BoundaryConfig::new(0.0, t_end, c1.position(0.0), c1.position(t_end), partner), c1)
}

fn circle_path(b: &BoundaryConfig, c: &Circle, n: usize) -> DiscretizedPath {
    let node_times: Vec<f64> = (0..=n).map(|k| b.t_start + (b.t_end - b.t_start) * k as f64 / n as f64).collect();
    let mut node_positions: Vec<Vec3> = node_times.iter().map(|&t| c.position(t)).collect();
    node_positions[0] = b.x_start;
    node_positions[n] = b.x_end;
    DiscretizedPath { node_times, node_positions }
}

fn action_closed_form() -> Outcome {
    let partner = PiecewiseTrajectory::constant(-Vec3::X, -10.0, 10.0).map_err(fmt_err)?;
    let b = BoundaryConfig::new(0.0, 1.0, Vec3::X, Vec3::X, partner);
    let s = action_s1(&DiscretizedPath::straight(&b, 4), &b).map_err(fmt_err)?;
    ensure((s.value + 1.5).abs() < 1e-10, || format!("S1 = {}", s.value))?;
    let (b, c) = attractive_boundary(1.0);
    let mut worst = 0.0f64;
    for n in [8, 16] {
        let v = action_s1(&circle_path(&b, &c, n), &b).map_err(fmt_err)?;
        worst = worst.max(v.quadrature_error_estimate);
    }
    ensure(worst < 1e-10, || format!("degree doubling changed S1 by {worst:e}"))?;
    Ok(format!("S1 = {:.15}, degree-doubling change {worst:.2e}", s.value))
}

fn gradient_and_extremals() -> Outcome {
    let mut notes = Vec::new();

    let (b, c) = attractive_boundary(1.0);
    let path = circle_path(&b, &c, 16);
    let f = ActionFunctional::new(&b, b.quadrature_points);
    let g1 = f.gradient(&path, 1e-6).map_err(fmt_err)?;
    let g2 = f.gradient(&path, 5e-7).map_err(fmt_err)?;
    let scale = g1.iter().map(|v| v.max_abs()).fold(0.0, f64::max);
    let diff = g1.iter().zip(&g2).map(|(a, b)| (*a - *b).max_abs()).fold(0.0, f64::max);
    ensure(diff < 1e-7 * scale, || format!("gradient steps disagree by {:e} relative", diff / scale))?;
    notes.push(format!("gradient h vs h/2 {:.1e}", diff / scale));

    let partner = PiecewiseTrajectory::constant(Vec3::new(5.0, 0.0, 0.0), -10.0, 20.0).map_err(fmt_err)?;
    let free = BoundaryConfig { coupling: 0.0, ..BoundaryConfig::new(0.0, 1.0, Vec3::ZERO, Vec3::new(0.3, 0.2, 0.1), partner) };
    let straight = DiscretizedPath::straight(&free, 8);
    let mut start = straight.clone();
    start.node_positions[3] += Vec3::new(0.02, -0.01, 0.03);
    start.node_positions[6] += Vec3::new(-0.01, 0.02, 0.0);
    // Node error is about |gradient| / Hessian, so the stop tolerance sits below 1e-8 times the Hessian scale.
    let tight = ExtremizeConfig { gradient_tolerance: 1e-10, ..ExtremizeConfig::default() };
    let (out, report) = extremize(&free, &start, &tight).map_err(fmt_err)?;
    ensure(report.converged, || "free extremization did not converge".into())?;
    let err = out.node_positions.iter().zip(&straight.node_positions).map(|(a, b)| (*a - *b).norm()).fold(0.0, f64::max);
    ensure(err < 1e-8, || format!("free path off the straight line by {err:e}"))?;
    notes.push(format!("free line error {err:.1e}"));

    let chain = build_sewing_chain(&symmetric_spec(1)).map_err(fmt_err)?;
    let mut worst_mismatch = 0.0f64;
    for &t in &[-1.0, 1.0] {
        let jump = admissible_jump(&chain.system, t).map_err(fmt_err)?;
        ensure((jump.v_right - jump.v_left).norm() > 1e-6, || format!("no velocity jump needed at t = {t}"))?;
        worst_mismatch = worst_mismatch.max(jump.mismatch);
    }
    ensure(worst_mismatch < 1e-10, || format!("current mismatch {worst_mismatch:e}"))?;
    notes.push(format!("engineered mismatch {worst_mismatch:.1e}"));

    let probes = [0.3, 0.45, 0.6, 0.7];
    let mut residuals = Vec::new();
    for n in [8usize, 16, 32] {
        let (ext, rep) = extremize(&b, &circle_path(&b, &c, n), &ExtremizeConfig::default()).map_err(fmt_err)?;
        ensure(rep.converged, || format!("attractive extremization with {n} intervals did not converge"))?;
        let mut r = 0.0f64;
        for &t in &probes {
            r = r.max(path_el_residual(&b, &ext, t).map_err(fmt_err)?.norm());
        }
        residuals.push(r);
    }
    let orders: Vec<f64> = residuals.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    ensure(orders.iter().all(|&o| o >= 1.0), || format!("EL residuals {residuals:?}, orders {orders:?}"))?;
    notes.push(format!("EL residuals {:?}, orders {orders:.2?}", residuals.iter().map(|r| format!("{r:.1e}")).collect::<Vec<_>>()));
    Ok(notes.join("; "))
}

fn main() -> ExitCode {
    let criteria: [(&str, u64, fn() -> Outcome); 10] = [
        ("light-cone solver", 5, lightcone_solver),
        ("field-form equivalence", 5, field_form_equivalence),
        ("static null case", 1, static_null_case),
        ("G.A.H. certification", 60, gah_certification),
        ("G.A.H. failure case", 60, gah_failure_case),
        ("rigidity", 5, rigidity),
        ("general solution", 30, general_solution),
        ("NDDE dichotomy", 1, ndde_dichotomy),
        ("action closed form", 5, action_closed_form),
        ("gradient and extremal checks", 120, gradient_and_extremals),
    ];
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > Duration::from_secs(*limit) => Err(format!("{detail}; took {elapsed:.2?}, limit {limit} s")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({elapsed:.2?}): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({elapsed:.2?}): {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
