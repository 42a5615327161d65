#![no_main]

use libfuzzer_sys::fuzz_target;
use trajsim::Series;

fuzz_target!(|text: &str| {
    let _ = Series::parse_text(text);
});
