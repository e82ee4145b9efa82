#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(events) = mixflow::data::read_events(data, "fuzz") {
        for p in events.points() {
            let n = mixflow::geometry::norm(p.coords());
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
});
