#![no_main]
use libfuzzer_sys::fuzz_target;
use robustcf::harness::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = ExperimentConfig::from_toml_str(text) {
        assert!(config.repetitions() > 0);
        let _ = config.settings();
    }
});
