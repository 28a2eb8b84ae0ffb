#![no_main]

use libfuzzer_sys::fuzz_target;
use qfvio::harness::io::{parse_vo_replay, write_vo_replay};

fuzz_target!(|data: &[u8]| {
    let Ok(vo) = parse_vo_replay(data, "fuzz") else {
        return;
    };
    let mut out = Vec::new();
    write_vo_replay(&vo, &mut out).unwrap();
    assert_eq!(parse_vo_replay(out.as_slice(), "roundtrip").unwrap(), vo);
});
