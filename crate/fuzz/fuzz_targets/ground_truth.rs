#![no_main]

use libfuzzer_sys::fuzz_target;
use qfvio::harness::io::{parse_ground_truth_with_biases, write_trajectory};

fuzz_target!(|data: &[u8]| {
    let Ok((samples, biases)) = parse_ground_truth_with_biases(data, "fuzz") else {
        return;
    };
    for s in &samples {
        assert!((s.q.norm() - 1.0).abs() < 1e-12);
    }
    let mut out = Vec::new();
    write_trajectory(&samples, &biases, &mut out).unwrap();
    let (again, again_biases) = parse_ground_truth_with_biases(out.as_slice(), "roundtrip").unwrap();
    assert_eq!(again.len(), samples.len());
    assert_eq!(again_biases, biases);
    for (a, b) in again.iter().zip(&samples) {
        assert_eq!((a.t, a.p, a.v), (b.t, b.p, b.v));
        assert!(a.q.approx_eq(&b.q, 1e-12));
    }
});
