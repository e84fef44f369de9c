#![no_main]

use aegis_core::fixtures;
use aegis_core::model::UserProfile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = UserProfile::from_json(text, &fixtures::schema());
    }
});
