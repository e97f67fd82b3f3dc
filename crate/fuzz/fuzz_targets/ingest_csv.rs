#![no_main]

use atlas::data::{build_tensor, ingest_reader, ColumnMap};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(report) = ingest_reader(data, &ColumnMap::default()) {
        let _ = build_tensor(&report.transactions, 1, 1);
    }
});
