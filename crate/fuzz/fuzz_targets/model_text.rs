#![no_main]

use atlas::factor::FactorModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = FactorModel::from_text(text) {
        let again = FactorModel::from_text(&model.to_text()).expect("rendered model parses");
        assert_eq!(again.to_text(), model.to_text());
    }
});
