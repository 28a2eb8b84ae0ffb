use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qfvio(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qfvio"))
        .current_dir(dir)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn simulate_run_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let sim = qfvio(d, &["simulate", "--scenario", "circle", "--duration", "4", "--seed", "3", "--out", "seq"]);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    assert!(d.join("seq/mav0/imu0/data.csv").exists());
    assert_eq!(manifest(&d.join("seq"))["scenario"]["seed"], 3);

    let run = qfvio(d, &["run", "--data", "seq", "--mode", "eskf", "--set", "adaptive.s=0.5", "--out", "r"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let m = manifest(&d.join("r"));
    assert_eq!(m["config"]["mode"], "eskf");
    assert_eq!(m["config"]["adaptive"]["s"], 0.5);
    let outputs: Vec<_> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(outputs, ["trajectory.csv", "log.csv", "timing.csv", "report.json"]);

    let eval = qfvio(
        d,
        &[
            "evaluate",
            "--estimate",
            "r/trajectory.csv",
            "--ground-truth",
            "seq/mav0/state_groundtruth_estimate0/data.csv",
            "--out",
            "e",
        ],
    );
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let a: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("r/report.json")).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("e/report.json")).unwrap()).unwrap();
    assert_eq!(a["ate_rmse"], b["ate_rmse"]);
}

#[test]
fn runs_with_the_same_seed_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for out in ["a", "b"] {
        let o = qfvio(d, &["run", "--duration", "3", "--corruption", "0.3", "--mode", "adaptive", "--seed", "8", "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["trajectory.csv", "log.csv"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap());
    }
}

#[test]
fn config_file_env_and_flags_layer() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("cfg.toml"), "mode = \"eskf\"\n[adaptive]\ns = 2.0\nw_thr = 0.3\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_qfvio"))
        .current_dir(d)
        .args(["run", "--config", "cfg.toml", "--set", "adaptive.w_thr=0.4", "--duration", "2", "--out", "r"])
        .env("QFVIO_ADAPTIVE__S", "3.0")
        .env("QFVIO_ADAPTIVE__W_THR", "0.1")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&d.join("r"));
    assert_eq!(m["config"]["mode"], "eskf");
    assert_eq!(m["config"]["adaptive"]["s"], 3.0);
    assert_eq!(m["config"]["adaptive"]["w_thr"], 0.4);
}

#[test]
fn compare_and_sweep_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = qfvio(d, &["compare", "--duration", "3", "--out", "c"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(d.join("c/comparison.csv")).unwrap();
    assert!(csv.starts_with("metric,hybrid_qf_vs_eskf,"));

    let o = qfvio(
        d,
        &["sweep", "--duration", "3", "--mode", "adaptive", "--param", "w_thr=0.1,0.3", "--param", "s=1", "--out", "s"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(d.join("s/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn exit_codes_follow_error_category() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(qfvio(d, &["run", "--set", "imu.nope=1"]).status.code(), Some(3));
    assert_eq!(qfvio(d, &["run", "--mode", "kalman"]).status.code(), Some(3));
    assert_eq!(qfvio(d, &["run", "--bogus"]).status.code(), Some(3));
    assert_eq!(qfvio(d, &["run", "--data", "missing"]).status.code(), Some(5));

    let imu = d.join("bad/imu0");
    fs::create_dir_all(&imu).unwrap();
    fs::write(imu.join("data.csv"), "#t,wx,wy,wz,ax,ay,az\n1,0,0,0,0,0\n").unwrap();
    let o = qfvio(d, &["run", "--data", "bad"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2:"));
}
