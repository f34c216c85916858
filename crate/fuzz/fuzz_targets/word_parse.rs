#![no_main]

use freepd_core::words::Word;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(w) = Word::parse(text) {
        // Parsed words are reduced, so printing and reparsing is the identity.
        let again = Word::parse(&w.to_string()).expect("printed word reparses");
        assert_eq!(again, w);
        assert_eq!(w.mul(&w.inverse()), Word::identity());
    }
});
