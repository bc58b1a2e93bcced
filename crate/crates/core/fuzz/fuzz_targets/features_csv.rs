#![no_main]

use libfuzzer_sys::fuzz_target;
use mfqe_core::metrics::{parse_features_csv, write_features_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_features_csv(data) {
        let mut out = Vec::new();
        write_features_csv(&rows, &mut out).unwrap();
        assert_eq!(parse_features_csv(&out).unwrap(), rows);
    }
});
