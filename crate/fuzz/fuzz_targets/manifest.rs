#![no_main]

use halluc_core::dataio::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = Manifest::parse(text) {
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(Manifest::parse(&json).expect("serialized manifest must parse"), m);
    }
});
