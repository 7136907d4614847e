#![no_main]

use freqact::trajectory::{idct_k, parse_spectrum_csv, render_spectrum_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = parse_spectrum_csv("fuzz", text) {
        let again = parse_spectrum_csv("fuzz", &render_spectrum_csv(&s)).expect("rendered csv parses");
        assert_eq!(again.coeffs(), s.coeffs());
        let _ = idct_k(&s, s.horizon());
    }
});
