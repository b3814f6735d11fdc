#![no_main]
use libfuzzer_sys::fuzz_target;
use rawlid::embedding::{parse_embeddings_tsv, write_embeddings_tsv};

fuzz_target!(|text: &str| {
    if let Ok(set) = parse_embeddings_tsv(text) {
        if let Ok(out) = write_embeddings_tsv(&set) {
            assert_eq!(parse_embeddings_tsv(&out).expect("written TSV parses"), set);
        }
    }
});
