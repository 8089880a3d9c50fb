#![no_main]

use fragchain::harness::StudyConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = StudyConfig::parse(text) {
        let again = StudyConfig::parse(&cfg.to_kv()).expect("canonical form parses");
        assert_eq!(cfg.to_kv(), again.to_kv());
        assert_eq!(cfg.hash(), again.hash());
    }
});
