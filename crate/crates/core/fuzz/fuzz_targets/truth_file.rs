#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(file) = mixflow::files::parse_truth(text) {
        let again = mixflow::files::parse_truth(&file.to_json()).expect("re-parse");
        assert_eq!(again, file);
    }
});
