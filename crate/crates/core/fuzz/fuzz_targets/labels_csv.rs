#![no_main]

use libfuzzer_sys::fuzz_target;
use mfqe_core::detector::parse_labels_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok((probs, labels)) = parse_labels_csv(data) {
        assert_eq!(probs.len(), labels.len());
    }
});
