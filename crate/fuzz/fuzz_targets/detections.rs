#![no_main]

use halluc_core::dataio::{detections_to_string, parse_detections};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_detections(text) {
        let again = parse_detections(&detections_to_string(&records).unwrap()).expect("serialized records must parse");
        assert_eq!(again.len(), records.len());
    }
});
