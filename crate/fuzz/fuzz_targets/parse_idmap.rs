#![no_main]

use hsr_core::data::parse_idmap;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_idmap(data, "fuzz");
});
