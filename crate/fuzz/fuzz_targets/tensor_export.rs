#![no_main]

use atlas::data::{parse_tensor_csv, write_tensor_csv, TensorMetadata};
use libfuzzer_sys::fuzz_target;

// Input is the metadata text, a line holding `---`, then the tensor CSV.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Some((meta, body)) = text.split_once("\n---\n") else { return };
    let Ok(meta) = TensorMetadata::parse(meta) else { return };
    if let Ok(tensor) = parse_tensor_csv(body.as_bytes(), &meta) {
        let mut out = Vec::new();
        write_tensor_csv(&tensor, &mut out).unwrap();
    }
});
