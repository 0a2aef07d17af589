#![no_main]

use libfuzzer_sys::fuzz_target;
use locatednear::neural::LstmClassifier;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = LstmClassifier::from_bytes(data) {
        let bytes = c.to_bytes();
        let again = LstmClassifier::from_bytes(&bytes).expect("checkpoint re-reads");
        assert_eq!(again.to_bytes(), bytes);
    }
});
