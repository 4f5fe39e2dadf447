#![no_main]

use libfuzzer_sys::fuzz_target;
use wfbsde::io::{decode_bundle, encode_bundle};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(bundle) = decode_bundle(text) {
            let again = decode_bundle(&encode_bundle(&bundle)).expect("re-encoded bundle decodes");
            assert_eq!(again.x, bundle.x);
        }
    }
});
