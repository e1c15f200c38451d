#![no_main]

use eikonal::bench::BenchConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = BenchConfig::parse(text) {
        assert_eq!(BenchConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }
});
