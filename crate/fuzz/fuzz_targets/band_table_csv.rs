#![no_main]

use freqact::trajectory::{parse_band_table_csv, render_band_table_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = parse_band_table_csv("fuzz", text) {
        let again = parse_band_table_csv("fuzz", &render_band_table_csv(&t)).expect("rendered csv parses");
        assert_eq!(again, t);
    }
});
