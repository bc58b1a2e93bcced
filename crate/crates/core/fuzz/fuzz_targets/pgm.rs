#![no_main]

use libfuzzer_sys::fuzz_target;
use mfqe_core::frame_io::{encode_pgm, parse_pgm, parse_pgm_stream};

fuzz_target!(|data: &[u8]| {
    if let Ok((img, _)) = parse_pgm(data) {
        // Whatever decodes must survive a re-encode.
        let again = encode_pgm(img.width, img.height, &img.samples);
        let (back, rest) = parse_pgm(&again).expect("re-encoded greymap decodes");
        assert!(rest.is_empty());
        assert_eq!(back, img);
    }
    let _ = parse_pgm_stream(data);
});
