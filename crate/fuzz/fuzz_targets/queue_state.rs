#![no_main]

use aegis_core::queue::PublishQueue;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(mut queue) = PublishQueue::from_json(text) else {
        return;
    };
    let total = queue.len();
    let _ = queue.masked();
    let due = queue.next_due();
    let released = match due {
        Some(t) => queue.drain(t).len(),
        None => 0,
    };
    assert_eq!(released + queue.len(), total);
    PublishQueue::from_json(&queue.to_json()).expect("round trip");
});
