#![no_main]
use libfuzzer_sys::fuzz_target;
use lvkd_core::scaling_laws::{fit_loglog, parse_points_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(points) = parse_points_csv(text) {
        let _ = fit_loglog(&points);
    }
});
