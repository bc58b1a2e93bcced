#![no_main]

use libfuzzer_sys::fuzz_target;
use mfqe_core::tensor::{manifest_text, params_from_bytes, params_to_bytes, parse_manifest};

// Input layout: manifest text, a NUL byte, then the raw parameter blob.
fuzz_target!(|data: &[u8]| {
    let (head, blob) = match data.iter().position(|&b| b == 0) {
        Some(i) => (&data[..i], &data[i + 1..]),
        None => (data, &[][..]),
    };
    let Ok(text) = std::str::from_utf8(head) else { return };
    let Ok((seed, entries)) = parse_manifest(text) else { return };
    if let Ok(params) = params_from_bytes(seed, &entries, blob) {
        // Offsets may list tensors in any order; the canonical re-encode must
        // still decode to the same set.
        let (s2, e2) = parse_manifest(&manifest_text(&params)).unwrap();
        assert_eq!(s2, seed);
        assert_eq!(e2.len(), entries.len());
        assert_eq!(params_from_bytes(s2, &e2, &params_to_bytes(&params)).unwrap(), params);
    }
});
