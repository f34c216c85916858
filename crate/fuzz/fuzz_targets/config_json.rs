#![no_main]

use freepd_core::io::{config_spec_from_json, config_spec_to_json, parse_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(v) = parse_json(text, "fuzz") else { return };
    if let Ok(spec) = config_spec_from_json(&v) {
        assert_eq!(config_spec_from_json(&config_spec_to_json(&spec)).expect("writer output loads"), spec);
    }
});
