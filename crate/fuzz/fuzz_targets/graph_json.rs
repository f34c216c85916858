#![no_main]

use freepd_core::io::{graph_from_json, graph_to_json, parse_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(v) = parse_json(text, "fuzz") else { return };
    if let Ok(g) = graph_from_json(&v) {
        assert_eq!(graph_from_json(&graph_to_json(&g)).expect("writer output loads"), g);
    }
});
