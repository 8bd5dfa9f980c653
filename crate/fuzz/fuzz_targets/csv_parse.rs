#![no_main]

use libfuzzer_sys::fuzz_target;
use repnet::data::parse_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = parse_csv(data, "fuzz") {
        assert_eq!(ds.values().len(), ds.len() * ds.channels());
        assert!(ds.values().iter().all(|v| v.is_finite()));
    }
});
