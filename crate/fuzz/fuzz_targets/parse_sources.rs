#![no_main]

use eikonal::grid::SourceSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(set) = SourceSet::parse(text) {
        // Accepted sources survive a write/read cycle.
        let again = SourceSet::parse(&set.to_text()).expect("reparse");
        assert_eq!(again, set);
    }
});
