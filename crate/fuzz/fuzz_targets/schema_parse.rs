#![no_main]

use aegis_core::model::{AttributeSchema, Fraction};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = Fraction::parse(text);
    if let Ok(schema) = AttributeSchema::from_json(text) {
        let _ = schema.persona_count();
        let again = AttributeSchema::from_json(&schema.to_json()).expect("re-parse");
        assert_eq!(again.to_json(), schema.to_json());
    }
});
