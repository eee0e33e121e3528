#![no_main]

use interpoll::data::{read_dataset, write_dataset};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(d) = read_dataset(bytes) {
        let mut out = Vec::new();
        write_dataset(&d, &mut out).unwrap();
        let again = read_dataset(out.as_slice()).unwrap();
        assert_eq!(again.examples(), d.examples());
    }
});
