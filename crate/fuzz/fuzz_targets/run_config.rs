#![no_main]

use libfuzzer_sys::fuzz_target;
use sigtrust_cli::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::from_toml(text, &[], None) {
        let again = RunConfig::from_toml(&cfg.to_toml(), &[], None).expect("written config loads");
        assert_eq!(again, cfg);
    }
});
