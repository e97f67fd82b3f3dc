#![no_main]

use atlas::factor::{parse_group_file, resolve_groups};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(assignments) = parse_group_file(text) {
        let ids: Vec<String> = assignments.iter().map(|a| a.member_id.clone()).collect();
        let _ = resolve_groups(&ids, &assignments, &Default::default(), -0.2);
    }
});
