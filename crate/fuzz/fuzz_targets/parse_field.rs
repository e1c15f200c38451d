#![no_main]

use eikonal::field::DistanceField;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(field) = DistanceField::parse_text(text) {
        assert_eq!(DistanceField::parse_text(&field.to_text()).unwrap(), field);
    }
    if let Ok((domain, field)) = DistanceField::parse_grid_csv(text) {
        assert_eq!(field.len(), domain.len());
    }
});
