#![no_main]

use fragchain::BinaryDislocationLaw;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(law) = BinaryDislocationLaw::from_csv_str(text) {
        for i in 0..=64 {
            let r = law.rho(0.5 + i as f64 / 128.0);
            assert!(r >= 0.0 && r.is_finite());
        }
    }
});
