#![no_main]

use libfuzzer_sys::fuzz_target;
use locatednear::pipeline::Classifier;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Classifier::from_bytes(data) {
        let bytes = c.to_bytes();
        let again = Classifier::from_bytes(&bytes).expect("bundle re-reads");
        assert_eq!(again.to_bytes(), bytes);
    }
});
