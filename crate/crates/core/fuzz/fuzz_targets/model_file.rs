#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(file) = mixflow::files::parse_model(text) {
        // anything accepted must survive a save/load cycle unchanged
        let again = mixflow::files::parse_model(&file.to_json()).expect("re-parse");
        assert_eq!(again, file);
    }
});
