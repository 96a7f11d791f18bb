#![no_main]
use libfuzzer_sys::fuzz_target;
use wfed_core::io::{parse_trajectory, TrajectoryJson};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(tr) = parse_trajectory(text) {
        // accepted trajectories survive a write/read cycle unchanged
        let again = serde_json::to_string(&TrajectoryJson::from_trajectory(&tr)).unwrap();
        assert_eq!(parse_trajectory(&again).unwrap(), tr);
    }
});
