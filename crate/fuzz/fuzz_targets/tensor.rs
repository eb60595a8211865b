#![no_main]
use libfuzzer_sys::fuzz_target;
use lvkd_core::data_model::{decode_tensor, encode_tensor, TensorHeader};

// input: JSON sidecar, a NUL byte, then the raw blob
fuzz_target!(|data: &[u8]| {
    let Some(split) = data.iter().position(|b| *b == 0) else { return };
    let Ok(header) = TensorHeader::parse(&data[..split]) else { return };
    let blob = &data[split + 1..];
    if let Ok(tensor) = decode_tensor(&header, blob) {
        assert_eq!(encode_tensor(&tensor), blob);
    }
});
