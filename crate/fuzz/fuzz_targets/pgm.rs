#![no_main]

use libfuzzer_sys::fuzz_target;
use qfvio::adaptive::{entropy, mean_intensity, parse_pgm, write_pgm};

fuzz_target!(|data: &[u8]| {
    let Ok(frame) = parse_pgm(data, 0) else {
        return;
    };
    assert_eq!(frame.pixels().len(), frame.width() * frame.height());
    assert!((0.0..=255.0).contains(&mean_intensity(&frame)));
    assert!((0.0..=8.0).contains(&entropy(&frame)));
    let mut out = Vec::new();
    write_pgm(&frame, &mut out).unwrap();
    assert_eq!(parse_pgm(&out, 0).unwrap(), frame);
});
