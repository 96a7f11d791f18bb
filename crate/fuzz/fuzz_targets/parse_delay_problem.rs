#![no_main]
use libfuzzer_sys::fuzz_target;
use wfed_core::io::parse_delay_problem;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_delay_problem(text);
    }
});
