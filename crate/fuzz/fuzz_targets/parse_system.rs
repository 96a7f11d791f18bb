#![no_main]
use libfuzzer_sys::fuzz_target;
use wfed_core::io::{parse_system, system_to_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(sys) = parse_system(text) {
        parse_system(&system_to_json(&sys)).unwrap();
    }
});
