#![no_main]

use libfuzzer_sys::fuzz_target;
use trajsim::DistanceMatrix;

fuzz_target!(|text: &str| {
    if let Ok(m) = DistanceMatrix::parse_text(text) {
        assert_eq!(DistanceMatrix::parse_text(&m.to_text()).unwrap(), m);
    }
});
