#![no_main]

use adaptive_vlc::harness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::from_json(text) {
            let _ = cfg.warnings();
            assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).expect("roundtrip"), cfg);
        }
    }
});
