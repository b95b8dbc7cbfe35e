#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(model) = pohmm::model_file::from_json(text) {
            let again = pohmm::model_file::to_json(&model).expect("decoded model must encode");
            pohmm::model_file::from_json(&again).expect("encoded model must decode");
        }
    }
});
