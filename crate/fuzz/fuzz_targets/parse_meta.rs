#![no_main]

use hsr_core::data::parse_meta;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(meta) = parse_meta(text) {
        let again = parse_meta(&meta.render()).unwrap();
        assert_eq!(again.render(), meta.render());
    }
});
