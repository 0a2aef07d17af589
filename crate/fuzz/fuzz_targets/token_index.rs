#![no_main]

use libfuzzer_sys::fuzz_target;
use locatednear::normalize::TokenIndex;

fuzz_target!(|data: &[u8]| {
    if let Ok(index) = TokenIndex::read_tsv(data) {
        let text = index.to_tsv();
        let again = TokenIndex::read_tsv(text.as_bytes()).expect("index re-reads");
        assert_eq!(again.to_tsv(), text);
    }
});
