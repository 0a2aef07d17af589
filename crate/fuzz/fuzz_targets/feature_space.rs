#![no_main]

use libfuzzer_sys::fuzz_target;
use locatednear::features::FeatureSpace;

fuzz_target!(|data: &[u8]| {
    if let Ok(space) = FeatureSpace::read_tsv(data) {
        let text = space.to_tsv();
        let again = FeatureSpace::read_tsv(text.as_bytes()).expect("space re-reads");
        assert_eq!(again.to_tsv(), text);
    }
});
