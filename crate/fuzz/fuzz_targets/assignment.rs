#![no_main]

use interpoll::grouping::{read_assignment, write_assignment};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(a) = read_assignment(bytes) {
        let mut out = Vec::new();
        write_assignment(&a, &mut out).unwrap();
        assert_eq!(read_assignment(out.as_slice()).unwrap(), a);
    }
});
