#![no_main]

use libfuzzer_sys::fuzz_target;
use repnet::experiments::{ablation_cells, SearchResult};

fuzz_target!(|data: &[u8]| {
    if let Ok(result) = serde_json::from_slice::<SearchResult>(data) {
        let _ = ablation_cells(&result.trials, 1);
        let _ = ablation_cells(&result.trials, 3);
    }
});
