#![no_main]

use eit_shapes::ReconConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(c) = ReconConfig::from_json(s) {
        assert_eq!(ReconConfig::from_json(&c.to_json()).expect("round trip"), c);
    }
});
