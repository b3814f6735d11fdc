#![no_main]
use libfuzzer_sys::fuzz_target;
use rawlid::audio::{decode_wav, encode_wav};

fuzz_target!(|data: &[u8]| {
    if let Ok(clip) = decode_wav(data, "fuzz") {
        let again = decode_wav(&encode_wav(&clip.samples, clip.sample_rate), "fuzz").expect("re-encoded clip decodes");
        assert_eq!(again.samples, clip.samples);
    }
});
