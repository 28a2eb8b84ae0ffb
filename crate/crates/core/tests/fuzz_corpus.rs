use std::fs;
use std::path::PathBuf;

use qfvio::adaptive::{parse_pgm, write_pgm};
use qfvio::harness::io::{
    parse_euroc_imu, parse_ground_truth_with_biases, parse_vo_replay, write_euroc_imu,
    write_trajectory, write_vo_replay,
};
use qfvio::harness::RunConfig;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

fn accepted(target: &str, check: impl Fn(&[u8]) -> bool) -> Vec<String> {
    seeds(target)
        .into_iter()
        .filter(|(_, bytes)| check(bytes))
        .map(|(name, _)| name)
        .collect()
}

#[test]
fn imu_seeds_round_trip() {
    let ok = accepted("imu", |data| match parse_euroc_imu(data, "seed") {
        Ok(s) => {
            let mut out = Vec::new();
            write_euroc_imu(&s, &mut out).unwrap();
            assert_eq!(parse_euroc_imu(out.as_slice(), "again").unwrap(), s);
            true
        }
        Err(_) => false,
    });
    assert_eq!(ok, ["euroc_two_rows.csv", "minimal.csv"]);
}

#[test]
fn ground_truth_seeds_round_trip() {
    let ok = accepted("ground_truth", |data| match parse_ground_truth_with_biases(data, "seed") {
        Ok((s, b)) => {
            let mut out = Vec::new();
            write_trajectory(&s, &b, &mut out).unwrap();
            let (again, again_b) = parse_ground_truth_with_biases(out.as_slice(), "again").unwrap();
            assert_eq!(again_b, b);
            for (x, y) in again.iter().zip(&s) {
                assert_eq!((x.t, x.p, x.v), (y.t, y.p, y.v));
                assert!(x.q.approx_eq(&y.q, 1e-12));
            }
            true
        }
        Err(_) => false,
    });
    assert_eq!(ok, ["euroc_two_rows.csv", "identity_pose.csv"]);
}

#[test]
fn vo_seeds_round_trip() {
    let ok = accepted("vo_replay", |data| match parse_vo_replay(data, "seed") {
        Ok(vo) => {
            let mut out = Vec::new();
            write_vo_replay(&vo, &mut out).unwrap();
            assert_eq!(parse_vo_replay(out.as_slice(), "again").unwrap(), vo);
            true
        }
        Err(_) => false,
    });
    assert_eq!(ok, ["full_rows.csv", "no_metrics.csv"]);
}

#[test]
fn pgm_seeds_round_trip() {
    let ok = accepted("pgm", |data| match parse_pgm(data, 0) {
        Ok(f) => {
            let mut out = Vec::new();
            write_pgm(&f, &mut out).unwrap();
            assert_eq!(parse_pgm(&out, 0).unwrap(), f);
            true
        }
        Err(_) => false,
    });
    assert_eq!(ok, ["4x2.pgm", "comment.pgm"]);
}

#[test]
fn config_seeds_round_trip() {
    let ok = accepted("config", |data| {
        match RunConfig::from_toml_str(std::str::from_utf8(data).unwrap()) {
            Ok(cfg) => {
                assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
                true
            }
            Err(_) => false,
        }
    });
    assert_eq!(ok, ["defaults_subset.toml", "options.toml"]);
}
