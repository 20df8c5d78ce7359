#![no_main]

use eit_shapes::MeasurementSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(m) = MeasurementSet::from_json(s) {
        let _ = m.to_csv();
        let _ = m.traces_on(&m.sampling());
    }
});
