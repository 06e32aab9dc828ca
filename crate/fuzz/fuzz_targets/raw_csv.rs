#![no_main]

use libfuzzer_sys::fuzz_target;
use ssm_lfi::bench::{format_raw_csv, parse_raw_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rows) = parse_raw_csv(text) {
            assert_eq!(parse_raw_csv(&format_raw_csv(&rows)).unwrap(), rows);
        }
    }
});
