#![no_main]

use gmport::io::{parse_grid, MAX_GRID_STEPS};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(grid) = parse_grid(text) {
        assert!(grid.start < grid.stop);
        assert!(grid.steps >= 2 && grid.steps <= MAX_GRID_STEPS);
    }
});
