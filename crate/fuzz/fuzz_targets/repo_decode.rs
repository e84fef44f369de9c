#![no_main]

use aegis_core::corpus::TopicRepository;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(repo) = TopicRepository::decode(data) {
        let bytes = repo.encode();
        let again = TopicRepository::decode(&bytes).expect("encoded repository decodes");
        assert_eq!(again.encode(), bytes);
    }
});
