#![no_main]

use libfuzzer_sys::fuzz_target;
use mfqe_core::degrader::QpSchedule;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = QpSchedule::parse(text) {
        assert_eq!(QpSchedule::parse(&s.to_text()).unwrap(), s);
    }
});
