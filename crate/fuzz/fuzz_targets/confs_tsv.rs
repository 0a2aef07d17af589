#![no_main]

use libfuzzer_sys::fuzz_target;
use locatednear::aggregate::{read_confs, write_confs};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_confs(data) {
        let text = write_confs(&rows);
        let again = read_confs(text.as_bytes()).expect("confs re-read");
        assert_eq!(write_confs(&again), text);
    }
});
