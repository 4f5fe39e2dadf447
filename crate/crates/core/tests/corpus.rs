use std::fs;
use std::path::PathBuf;

use wfbsde::io::{decode_bundle, decode_field, parse_grid_flag, ExperimentConfig};

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&path).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn fuzz_seeds_decode_as_expected() {
    for (name, text) in seeds("field_decode") {
        assert_eq!(decode_field(&text).is_ok(), name.ends_with(".field"), "{name}");
    }
    for (name, text) in seeds("bundle_decode") {
        assert_eq!(decode_bundle(&text).is_ok(), name.ends_with(".bundle"), "{name}");
    }
    for (name, text) in seeds("grid_flag") {
        assert_eq!(parse_grid_flag(&text).is_ok(), name != "invalid", "{name}");
    }
    for (name, text) in seeds("config_parse") {
        let config = ExperimentConfig::from_toml(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        config.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
