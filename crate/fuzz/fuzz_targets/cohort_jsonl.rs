#![no_main]

use libfuzzer_sys::fuzz_target;
use trajsim::cohort::{parse_cohort, write_cohort};

fuzz_target!(|text: &str| {
    let Ok(cohort) = parse_cohort(text, 36) else { return };
    // Anything accepted must survive a write/read round trip.
    let mut out = Vec::new();
    write_cohort(&mut out, &cohort.patients).unwrap();
    let again = parse_cohort(std::str::from_utf8(&out).unwrap(), 36).unwrap();
    assert_eq!(cohort.patients, again.patients);
});
