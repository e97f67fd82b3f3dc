#![no_main]

use atlas::pipeline::parse_forecasts_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_forecasts_csv(data);
});
