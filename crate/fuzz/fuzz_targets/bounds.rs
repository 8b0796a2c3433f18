#![no_main]

use gmport::io::parse_bounds;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&n, rest)) = data.split_first() else { return };
    let n = usize::from(n % 8) + 1;
    let Ok(text) = std::str::from_utf8(rest) else { return };
    if let Ok(set) = parse_bounds(text, n) {
        assert_eq!(set.n(), n);
        for j in 0..n {
            assert!(set.lower_at(j) <= set.upper_at(j));
        }
    }
});
