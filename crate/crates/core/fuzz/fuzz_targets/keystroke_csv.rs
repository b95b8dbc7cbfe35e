#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(events) = pohmm::dataset::read_events(data) {
        let _ = pohmm::dataset::to_sequences(&events);
    }
});
