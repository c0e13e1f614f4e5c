#![no_main]

use bwe_core::config::TrainConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = TrainConfig::from_toml_str(text) {
        let again = TrainConfig::from_toml_str(&cfg.to_toml()).expect("valid config round-trips");
        assert_eq!(cfg, again);
    }
});
