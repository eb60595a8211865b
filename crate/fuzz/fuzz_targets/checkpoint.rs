#![no_main]
use libfuzzer_sys::fuzz_target;
use lvkd_student::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::decode(data) {
        let bytes = ckpt.encode().expect("decoded checkpoint re-encodes");
        let again = Checkpoint::decode(&bytes).expect("re-decode");
        assert_eq!(again.encode().expect("re-encode"), bytes);
    }
});
