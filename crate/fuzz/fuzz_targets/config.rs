#![no_main]

use libfuzzer_sys::fuzz_target;
use metadyn::harness::{config_hash, validate_config};

fuzz_target!(|data: &[u8]| {
    let Ok(raw) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = validate_config(raw) {
        let again = validate_config(&cfg.canonical_json()).expect("canonical config revalidates");
        assert_eq!(config_hash(&again), config_hash(&cfg));
    }
});
