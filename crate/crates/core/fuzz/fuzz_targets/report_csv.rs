#![no_main]

use libfuzzer_sys::fuzz_target;
use mfqe_core::pipeline::{parse_report_csv, EnhancementReport};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_report_csv(data) {
        let report = EnhancementReport::new(rows);
        let _ = report.to_checked_csv();
    }
});
