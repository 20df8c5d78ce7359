#![no_main]

use eit_shapes::Partition;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(p) = Partition::from_json(s) {
        let again = Partition::from_json(&p.to_json()).expect("serialized partition parses");
        assert_eq!(again, p);
    }
});
