#![no_main]

use libfuzzer_sys::fuzz_target;
use mfqe_core::detector::parse_quantized_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(q) = parse_quantized_csv(data) {
        assert!(q.iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
