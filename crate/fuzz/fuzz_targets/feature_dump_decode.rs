#![no_main]
use libfuzzer_sys::fuzz_target;
use rawlid::features::{decode_feature_dump, encode_feature_dump};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode_feature_dump(data) {
        let bytes = encode_feature_dump(&t);
        let again = decode_feature_dump(&bytes).expect("re-encoded dump decodes");
        assert_eq!(again.shape(), t.shape());
        assert_eq!(encode_feature_dump(&again), bytes);
    }
});
