#![no_main]

use fragchain::registry::LawKey;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(key) = LawKey::parse(text) {
        let again = LawKey::parse(&key.to_string()).expect("display output parses");
        assert_eq!(key, again);
    }
});
