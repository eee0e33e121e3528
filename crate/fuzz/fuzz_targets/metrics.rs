#![no_main]

use interpoll::training::{read_metrics_csv, write_metrics_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(m) = read_metrics_csv(bytes) {
        let mut out = Vec::new();
        write_metrics_csv(&m, &mut out).unwrap();
        assert_eq!(read_metrics_csv(out.as_slice()).unwrap(), m);
    }
});
