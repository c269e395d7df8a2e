#![no_main]

use hsr_core::data::{parse_trust, IdMap};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let users = IdMap::from_tokens(["a", "b", "c", "1", "2"].map(String::from).to_vec());
    if let Ok(t) = parse_trust(text, "fuzz", &users) {
        for &(a, b) in &t.pairs {
            assert!(a < users.len() && b < users.len());
        }
    }
});
