#![no_main]

use libfuzzer_sys::fuzz_target;
use wfbsde::io::{decode_field, encode_field};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(field) = decode_field(text) {
            // anything accepted must survive a round trip
            let again = decode_field(&encode_field(&field)).expect("re-encoded field decodes");
            assert_eq!(encode_field(&again), encode_field(&field));
        }
    }
});
