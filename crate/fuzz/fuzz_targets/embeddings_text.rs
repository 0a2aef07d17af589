#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = locatednear::embeddings::read_embeddings(data, None);
});
