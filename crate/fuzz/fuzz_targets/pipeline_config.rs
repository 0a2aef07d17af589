#![no_main]

use libfuzzer_sys::fuzz_target;
use locatednear::config::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = PipelineConfig::parse(text) {
        let out = config.to_text();
        let again = PipelineConfig::parse(&out).expect("config re-reads");
        assert_eq!(again.to_text(), out);
    }
});
