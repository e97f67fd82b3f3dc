#![no_main]

use atlas::data::KeyValues;
use atlas::pipeline::PipelineConfig;
use atlas::synth::SynthConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(kv) = KeyValues::parse(text) else { return };
    if let Ok(config) = PipelineConfig::from_key_values(&kv) {
        let again = PipelineConfig::from_key_values(&KeyValues::parse(&config.render()).unwrap())
            .expect("rendered config parses");
        assert_eq!(again.render(), config.render());
    }
    let _ = SynthConfig::default().apply(&kv);
});
