#![no_main]

use freqact::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse("fuzz", text) {
        let again = RunConfig::parse("fuzz", &cfg.render()).expect("rendered config parses");
        assert_eq!(again, cfg);
        let _ = cfg.validate();
    }
});
