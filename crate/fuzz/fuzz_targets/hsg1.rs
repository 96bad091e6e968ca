#![no_main]

use halluc_core::dataio::{decode_saliency, encode_saliency};
use halluc_core::descriptors::SaliencySource;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(frames) = decode_saliency(data, SaliencySource::Spatial) {
        let bytes = encode_saliency(&frames).expect("decoded frames share one grid");
        assert_eq!(decode_saliency(&bytes, SaliencySource::Spatial).expect("re-encoded HSG1 must decode"), frames);
    }
});
