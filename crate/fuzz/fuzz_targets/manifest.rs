#![no_main]

use freqact::env::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = Manifest::parse("fuzz", text) {
        let again = Manifest::parse("fuzz", &m.render()).expect("rendered manifest parses");
        assert_eq!(again, m);
    }
});
