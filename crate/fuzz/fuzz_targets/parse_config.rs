#![no_main]

use hsr_core::config::{Source, TrainConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let mut cfg = TrainConfig::default();
    if cfg.apply_text(text, "fuzz", Source::File).is_ok() {
        let rendered = cfg.render();
        let mut back = TrainConfig::default();
        back.apply_text(&rendered, "rendered", Source::File).unwrap();
        assert_eq!(back.render(), rendered);
    }
});
