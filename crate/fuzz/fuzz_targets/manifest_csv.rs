#![no_main]
use libfuzzer_sys::fuzz_target;
use lvkd_core::data_model::{parse_records_csv, write_records_csv, DatasetManifest};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_records_csv(text) {
        // whatever parses must survive a write/parse round trip
        let again = parse_records_csv(&write_records_csv(&records)).expect("re-parse");
        assert_eq!(again, records);
        let _ = DatasetManifest::new(records);
    }
});
