#![no_main]

use halluc_core::dataio::FeatureFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(file) = FeatureFile::from_bytes(data) {
        let again = FeatureFile::from_bytes(&file.to_bytes()).expect("re-encoded HFV1 must decode");
        assert_eq!(again.dims, file.dims);
        assert_eq!(again.dtype, file.dtype);
    }
});
