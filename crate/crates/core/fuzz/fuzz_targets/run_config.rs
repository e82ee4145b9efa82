#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = mixflow::config::parse_config(text, "fuzz") {
        let again = mixflow::config::parse_config(&cfg.to_toml().expect("in range"), "fuzz").expect("re-parse");
        assert_eq!(again, cfg);
    }
});
