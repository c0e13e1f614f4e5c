#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(a) = bwe_core::audio::decode_wav_bytes(data) {
        assert!(a.sample_rate() > 0);
        assert!(a.samples().iter().all(|v| v.is_finite()));
    }
});
