#![no_main]

use gmport::io::parse_returns_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(r) = parse_returns_csv(text) {
        assert_eq!(r.assets.len(), r.data.ncols());
        assert!(r.data.nrows() > 0);
        assert!(r.data.iter().all(|v| v.is_finite()));
    }
});
