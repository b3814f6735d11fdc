#![no_main]
use libfuzzer_sys::fuzz_target;
use rawlid::config::RunConfig;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = RunConfig::from_json(text) {
        assert_eq!(RunConfig::from_json(&cfg.to_json_pretty()).expect("printed config parses"), cfg);
    }
});
