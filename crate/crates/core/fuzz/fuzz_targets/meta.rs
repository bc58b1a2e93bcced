#![no_main]

use libfuzzer_sys::fuzz_target;
use mfqe_core::frame_io::SequenceMeta;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(meta) = SequenceMeta::parse(text) {
        let _ = SequenceMeta::parse(&meta.to_text());
    }
});
