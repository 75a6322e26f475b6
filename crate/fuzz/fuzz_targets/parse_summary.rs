#![no_main]

use gluon_mvr::csv::{parse_summary, summary_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rows) = parse_summary(text) {
            let emitted = summary_csv(&rows);
            let again = parse_summary(&emitted).expect("emitted summary must parse");
            assert_eq!(summary_csv(&again), emitted);
        }
    }
});
