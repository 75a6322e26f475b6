#![no_main]

use gluon_mvr::csv::parse_trace;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rows) = parse_trace(text) {
            let width = rows.first().map(|r| r.layer_dual_norms.len());
            assert!(rows.iter().all(|r| Some(r.layer_dual_norms.len()) == width));
        }
    }
});
