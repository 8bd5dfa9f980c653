#![no_main]

use libfuzzer_sys::fuzz_target;
use repnet::RunReport;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = RunReport::from_json(text) {
        let _ = report.loss_curve_csv();
        RunReport::from_json(&report.to_json()).expect("serialized report parses");
    }
});
