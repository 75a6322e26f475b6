#![no_main]

use gluon_mvr::config::parse_config_with;
use libfuzzer_sys::fuzz_target;

// Input: config text, optionally followed by a NUL byte and one override per line.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let (config, overrides) = text.split_once('\0').unwrap_or((text, ""));
    let overrides: Vec<String> = overrides.lines().map(str::to_string).collect();
    if let Ok(cfg) = parse_config_with(config, &overrides) {
        let snapshot = cfg.snapshot(None);
        let again = parse_config_with(&snapshot, &[]).expect("snapshot must parse");
        assert_eq!(again.snapshot(None), snapshot);
    }
});
