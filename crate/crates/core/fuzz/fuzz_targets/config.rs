#![no_main]

use libfuzzer_sys::fuzz_target;
use mfqe_core::pipeline::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = PipelineConfig::parse(text) {
        assert_eq!(PipelineConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
});
