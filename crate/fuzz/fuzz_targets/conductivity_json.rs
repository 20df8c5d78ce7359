#![no_main]

use eit_shapes::Conductivity;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(c) = Conductivity::from_json(s) {
        assert!(c.region_values().iter().all(|v| v.is_finite()));
        let _ = Conductivity::from_json(&c.to_json()).expect("serialized conductivity parses");
    }
});
