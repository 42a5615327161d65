#![no_main]

use libfuzzer_sys::fuzz_target;
use trajsim::model::LogisticModel;

fuzz_target!(|text: &str| {
    if let Ok(m) = LogisticModel::parse_text(text) {
        assert_eq!(LogisticModel::parse_text(&m.to_text()).unwrap(), m);
    }
});
