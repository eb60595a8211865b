#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((h, w, pixels)) = lvkd_core::data_model::decode_png_gray(data) {
        assert_eq!(pixels.len(), h * w);
    }
});
