//! Replays the checked-in fuzz seeds through the parser entry points.

use std::fs;
use std::path::PathBuf;

use wfed_core::io::{parse_boundary, parse_delay_problem, parse_path, parse_sewing_spec, parse_system, parse_trajectory, system_to_json, TrajectoryJson};

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn trajectory_seeds() {
    let mut accepted = 0;
    for (_, text) in seeds("parse_trajectory") {
        if let Ok(tr) = parse_trajectory(&text) {
            let again = serde_json::to_string(&TrajectoryJson::from_trajectory(&tr)).unwrap();
            assert_eq!(parse_trajectory(&again).unwrap(), tr);
            accepted += 1;
        }
    }
    assert_eq!(accepted, 2);
}

#[test]
fn system_seeds() {
    for (p, text) in seeds("parse_system") {
        match parse_system(&text) {
            Ok(sys) => {
                parse_system(&system_to_json(&sys)).unwrap();
            }
            Err(e) => assert!(p.ends_with("one_particle.json"), "{}: {e}", p.display()),
        }
    }
}

#[test]
fn other_seeds_do_not_panic() {
    let ok = |r: bool| r as usize;
    let n: usize = seeds("parse_sewing_spec").iter().map(|(_, t)| ok(parse_sewing_spec(t).is_ok())).sum();
    assert_eq!(n, 2);
    let n: usize = seeds("parse_boundary").iter().map(|(_, t)| ok(parse_boundary(t).is_ok())).sum();
    assert_eq!(n, 3);
    let n: usize = seeds("parse_path").iter().map(|(_, t)| ok(parse_path(t).is_ok())).sum();
    assert_eq!(n, 1);
    let n: usize = seeds("parse_delay_problem").iter().map(|(_, t)| ok(parse_delay_problem(t).is_ok())).sum();
    assert_eq!(n, 3);
}
