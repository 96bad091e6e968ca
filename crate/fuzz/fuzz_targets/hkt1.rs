#![no_main]

use halluc_core::dataio::decode_checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = decode_checkpoint(data);
});
