#![no_main]

use halluc_core::sketch::MultiSketch;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ms) = MultiSketch::from_record(data) {
        let again = MultiSketch::from_record(&ms.to_record()).expect("re-encoded record must decode");
        assert_eq!(again.plans(), ms.plans());
    }
});
