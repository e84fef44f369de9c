#![no_main]

use aegis_core::simgen::GeneratorSpec;
use libfuzzer_sys::fuzz_target;

// Parsing and validation only; generating from an arbitrary spec is unbounded work.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = GeneratorSpec::from_json(text) {
            GeneratorSpec::from_json(&spec.to_json()).expect("round trip");
        }
    }
});
