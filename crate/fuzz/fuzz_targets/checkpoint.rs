#![no_main]

use interpoll::model::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(m) = decode_checkpoint(bytes) {
        let again = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
        assert!(again.bitwise_eq(&m));
    }
});
