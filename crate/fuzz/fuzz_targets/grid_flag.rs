#![no_main]

use libfuzzer_sys::fuzz_target;
use wfbsde::io::parse_grid_flag;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = parse_grid_flag(text) {
            let _ = spec.to_grid();
        }
    }
});
