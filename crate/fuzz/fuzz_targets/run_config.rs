#![no_main]
use std::path::Path;

use libfuzzer_sys::fuzz_target;
use lvkd_cli::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = RunConfig::parse(text, Path::new("/base")) {
        let again = RunConfig::parse(&config.to_json(), Path::new("/base")).expect("re-parse");
        assert_eq!(again.hash(), config.hash());
    }
});
