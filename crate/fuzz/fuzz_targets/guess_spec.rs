#![no_main]

use eit_shapes::recon::parse_guess_spec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(g) = parse_guess_spec(s) {
        let _ = g.conductivity();
        let _ = g.delta();
    }
});
