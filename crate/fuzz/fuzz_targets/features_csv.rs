#![no_main]

use atlas::data::{Cell, SalesTensor};
use atlas::pipeline::parse_features_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let cells = vec![Cell { store: 0, product: 0, week: 0, value: 1.0 }];
    let tensor = SalesTensor::new(vec!["s1".into()], vec!["p1".into(), "p2".into()], 4, 0, cells).unwrap();
    let _ = parse_features_csv(data, &tensor);
});
