#![no_main]

use atlas::factor::parse_covariance_file;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_covariance_file(text);
    }
});
