#![no_main]

use gmport::io::{model_to_json, parse_model_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = parse_model_json(text) {
        // anything accepted must survive a save/load cycle
        let again = parse_model_json(&model_to_json(&model).unwrap()).unwrap();
        assert_eq!(again, model);
    }
});
