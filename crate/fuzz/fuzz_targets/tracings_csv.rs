#![no_main]
use libfuzzer_sys::fuzz_target;
use lvkd_core::data_model::{parse_tracings_csv, rasterize_tracing};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((tracings, _)) = parse_tracings_csv(text) {
        for t in tracings.values().flatten().take(4) {
            let _ = rasterize_tracing(t, 32, 32);
        }
    }
});
