#![no_main]

use libfuzzer_sys::fuzz_target;
use locatednear::metrics::{read_gold_pairs, write_gold_pairs};

fuzz_target!(|data: &[u8]| {
    if let Ok(gold) = read_gold_pairs(data) {
        let text = write_gold_pairs(&gold);
        let again = read_gold_pairs(text.as_bytes()).expect("gold re-reads");
        assert_eq!(again, gold);
    }
});
