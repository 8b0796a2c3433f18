#![no_main]

use gmport::io::parse_weights;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ws) = parse_weights(text) {
        assert!(!ws.is_empty());
        assert!(ws.iter().all(|w| w.is_finite()));
    }
});
