#![no_main]

use freepd_core::io::{parse_json, pdfunction_from_json, pdfunction_to_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(v) = parse_json(text, "fuzz") else { return };
    if let Ok(f) = pdfunction_from_json(&v) {
        let back = pdfunction_from_json(&pdfunction_to_json(&f)).expect("writer output loads");
        assert_eq!(pdfunction_to_json(&back), pdfunction_to_json(&f));
    }
});
