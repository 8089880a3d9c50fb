#![no_main]

use fragchain::ObservationSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(obs) = ObservationSet::read_jsonl(text) {
        let mut buf = Vec::new();
        obs.write_jsonl(&mut buf).unwrap();
        let again = ObservationSet::read_jsonl(std::str::from_utf8(&buf).unwrap()).expect("own dump parses");
        let mut buf2 = Vec::new();
        again.write_jsonl(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }
});
