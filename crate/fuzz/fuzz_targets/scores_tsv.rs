#![no_main]

use libfuzzer_sys::fuzz_target;
use locatednear::aggregate::{read_scores, write_scores};

fuzz_target!(|data: &[u8]| {
    if let Ok(scores) = read_scores(data) {
        let text = write_scores(&scores);
        let again = read_scores(text.as_bytes()).expect("scores re-read");
        assert_eq!(write_scores(&again), text);
    }
});
