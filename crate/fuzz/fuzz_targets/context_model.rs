#![no_main]

use atlas::pipeline::ContextModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = ContextModel::from_csv(text) {
        let again = ContextModel::from_csv(&model.to_csv()).expect("rendered context model parses");
        assert_eq!(again, model);
    }
});
