#![no_main]

use freqact::trajectory::{parse_trajectory_csv, render_trajectory_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = parse_trajectory_csv("fuzz", text) {
        // accepted input must survive a render/parse round trip bit-for-bit
        let again = parse_trajectory_csv("fuzz", &render_trajectory_csv(&t)).expect("rendered csv parses");
        assert_eq!(again.values(), t.values());
    }
});
