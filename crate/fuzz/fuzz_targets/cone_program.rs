#![no_main]

use gmport::graphform::parse_cone_program;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(program) = parse_cone_program(text) {
        let written = program.to_text();
        let again = parse_cone_program(&written).expect("written fixture parses");
        assert_eq!(again.to_text(), written);
    }
});
