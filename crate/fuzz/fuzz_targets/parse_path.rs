#![no_main]
use libfuzzer_sys::fuzz_target;
use wfed_core::io::parse_path;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(path) = parse_path(text) {
        assert_eq!(path.node_times.len(), path.node_positions.len());
        assert!(path.node_times.windows(2).all(|w| w[0] < w[1]));
    }
});
