use std::path::Path;
use std::process::Command;

fn lowsnr(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lowsnr")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn outputs_are_reproducible_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"design": {"kind": "anova", "p": 40}, "seeds": {"base": 3, "replications": 200}}"#,
    );
    let mut outs = Vec::new();
    for (k, threads) in ["1", "3", "1"].iter().enumerate() {
        let out = tmp.path().join(format!("o{k}"));
        let o = lowsnr(&["coverage_mc", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outs.push(std::fs::read(out.join("coverage.csv")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[0], outs[2]);
    let text = String::from_utf8(outs[0].clone()).unwrap();
    let mut lines = text.lines();
    let first = lines.next().unwrap();
    assert!(first.starts_with("# config_hash=") && first.ends_with(",seed=3"), "{first}");
    assert!(lines.next().unwrap().starts_with("interval,"));
}

#[test]
fn seed_flag_changes_output_and_is_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"design": {"kind": "anova", "p": 20}, "seeds": {"replications": 100}}"#);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(lowsnr(&["coverage_mc", "--config", &cfg, "--out", a.to_str().unwrap(), "--seed", "1"]).status.success());
    assert!(lowsnr(&["coverage_mc", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "2"]).status.success());
    assert_ne!(std::fs::read(a.join("coverage.csv")).unwrap(), std::fs::read(b.join("coverage.csv")).unwrap());
    let run: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["config"]["seeds"]["base"], 1);
    assert_eq!(run["config"]["experiment"], "coverage_mc");
}

#[test]
fn diagnose_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "bad.json", r#"{"design": {"kind": "anova", "p": 30, "sigma2": 0.4}}"#);
    let out = tmp.path().join("bad");
    let o = lowsnr(&["diagnose", "--config", &bad, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let csv = std::fs::read_to_string(out.join("assumptions.csv")).unwrap();
    assert!(csv.contains("high_temperature,FAIL"));

    // user matrix: identity
    let m = tmp.path().join("x.csv");
    let mut body = String::from("5,5\n");
    for i in 0..5 {
        let row: Vec<&str> = (0..5).map(|j| if i == j { "1" } else { "0" }).collect();
        body.push_str(&row.join(","));
        body.push('\n');
    }
    std::fs::write(&m, body).unwrap();
    let good = write_config(
        tmp.path(),
        "good.json",
        &format!(r#"{{"design": {{"kind": "matrix", "path": "{}"}}}}"#, m.display()),
    );
    let out = tmp.path().join("good");
    let o = lowsnr(&["diagnose", "--config", &good, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("assumptions.csv")).unwrap();
    assert!(!csv.contains("FAIL") && !csv.contains("WARN"));
}

#[test]
fn bad_configs_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"design": {"kind": "matrix", "path": "/no/such/file.csv"}}"#);
    let o = lowsnr(&["diagnose", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let cfg = write_config(tmp.path(), "d.json", r#"{"experiment": "figure1"}"#);
    let o = lowsnr(&["diagnose", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
}
