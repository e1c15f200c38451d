#![no_main]

use eikonal::nn::NetworkWeights;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(w) = NetworkWeights::from_bytes(data) {
        assert_eq!(w.to_bytes(), data);
    }
});
