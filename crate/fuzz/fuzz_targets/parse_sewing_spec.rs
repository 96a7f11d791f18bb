#![no_main]
use libfuzzer_sys::fuzz_target;
use wfed_core::io::parse_sewing_spec;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_sewing_spec(text);
    }
});
