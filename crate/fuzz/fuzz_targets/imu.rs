#![no_main]

use libfuzzer_sys::fuzz_target;
use qfvio::harness::io::{parse_euroc_imu, write_euroc_imu};

fuzz_target!(|data: &[u8]| {
    let Ok(samples) = parse_euroc_imu(data, "fuzz") else {
        return;
    };
    let mut out = Vec::new();
    write_euroc_imu(&samples, &mut out).unwrap();
    assert_eq!(parse_euroc_imu(out.as_slice(), "roundtrip").unwrap(), samples);
});
