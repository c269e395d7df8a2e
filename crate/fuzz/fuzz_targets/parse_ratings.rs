#![no_main]

use hsr_core::data::parse_ratings;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(r) = parse_ratings(text, "fuzz") {
        for &(u, i, rating) in &r.records {
            assert!(u < r.users.len());
            assert!(i < r.items.len());
            assert!(rating.is_finite());
        }
    }
});
