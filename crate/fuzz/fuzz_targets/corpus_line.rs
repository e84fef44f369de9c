#![no_main]

use aegis_core::corpus::{LabeledPost, TopicRepository};
use aegis_core::fixtures;
use libfuzzer_sys::fuzz_target;

// Every line that parses must either ingest cleanly or be rejected with an error.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let posts: Vec<LabeledPost> = text.lines().filter_map(|l| LabeledPost::parse_line(l).ok()).collect();
    let mut repo = TopicRepository::new(fixtures::schema());
    let _ = repo.ingest_batch(&posts);
    let snap = repo.snapshot();
    let _ = snap.topic_ids().count();
});
