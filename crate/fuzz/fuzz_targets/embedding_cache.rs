#![no_main]

use libfuzzer_sys::fuzz_target;
use locatednear::embeddings::EmbeddingTable;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = EmbeddingTable::from_cache_bytes(data) {
        let bytes = table.to_cache_bytes();
        let again = EmbeddingTable::from_cache_bytes(&bytes).expect("cache re-reads");
        assert_eq!(again.to_cache_bytes(), bytes);
    }
});
