#![no_main]

use eikonal::dataset::Dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ds) = Dataset::parse_jsonl(text) {
        assert_eq!(Dataset::parse_jsonl(&ds.to_jsonl()).unwrap(), ds);
    }
});
