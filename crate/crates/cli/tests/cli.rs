use std::fs;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adaptive-pir"))
        .args(args)
        .env_remove("ADAPTIVE_PIR_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SYS: [&str; 10] = ["-N", "9", "-K", "2", "-X", "2", "-T", "2", "-M", "3"];

fn with_sys(cmd: &str, extra: &[&str]) -> Vec<String> {
    std::iter::once(cmd).chain(SYS).chain(extra.iter().copied()).map(String::from).collect()
}

fn run_owned(args: &[String]) -> Output {
    run(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn params_reports_derived_quantities() {
    let out = run_owned(&with_sys("params", &[]));
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        stdout(&out),
        "N=9 K=2 X=2 T=2 M=3\nlambda=4\nP=48\ngamma=12,4,8,24\nthresholds=12,16,24,48\nq=13\n\
         rate S=0: 4/9 (0.444444)\nrate S=1: 3/8 (0.375000)\nrate S=2: 2/7 (0.285714)\nrate S=3: 1/6 (0.166667)\n"
    );
}

#[test]
fn params_json_parses() {
    let out = run_owned(&with_sys("params", &["--format", "json"]));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["lambda"], 4);
    assert_eq!(v["P"], 48);
    assert_eq!(v["rates"][1], "3/8 (0.375000)");
}

#[test]
fn too_few_servers_is_a_usage_error() {
    let out = run(&["params", "-N", "6", "-K", "2", "-X", "3", "-T", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn missing_flag_is_a_usage_error() {
    assert_eq!(run(&["rates", "-N", "8"]).status.code(), Some(2));
}

#[test]
fn qarray_single_row() {
    let out = run(&["qarray", "--lambda", "1", "--verify"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "[0]\nC0: pass\nC1: pass\nC2: pass\nC3: pass\n");
}

#[test]
fn qarray_from_system_matches_lambda() {
    let a = run(&["qarray", "-N", "8", "-K", "2", "-X", "2", "-T", "2"]);
    let b = run(&["qarray", "--lambda", "3"]);
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&b).starts_with("[ 0  3  6  9 12 15 |  *  0  9 |"));
}

#[test]
fn qarray_json_round_trips() {
    let out = run(&["qarray", "--lambda", "2", "--format", "json", "--verify"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["array"]["cells"][0], serde_json::json!([0, 2, "*", 0]));
    assert_eq!(v["conditions"]["c3"]["holds"], true);
}

#[test]
fn certify_writes_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cert.json");
    let out = run(&[
        "certify", "-N", "8", "-K", "2", "-X", "2", "-T", "2", "--q", "11", "--framework", "csa", "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).starts_with("CSA framework over GF(11), N=8 K=2 X=2 T=2\nF0: pass\n"));
    let cert: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(cert["f2"], true);
}

#[test]
fn certify_rejects_small_field() {
    let out = run(&["certify", "-N", "8", "-K", "2", "-X", "2", "-T", "2", "--q", "7"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rates_csv_for_nine_servers() {
    let out = run_owned(&with_sys("rates", &["--trials", "5", "--framework", "csa"]));
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let rates: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(rates, ["4/9", "3/8", "2/7", "1/6"]);
}

#[test]
fn seed_env_var_matches_flag() {
    let args = with_sys("rates", &["--trials", "3"]);
    let flag = run_owned(&[args.clone(), vec!["--seed".into(), "77".into()]].concat());
    let env = Command::new(env!("CARGO_BIN_EXE_adaptive-pir"))
        .args(&args)
        .env("ADAPTIVE_PIR_SEED", "77")
        .output()
        .unwrap();
    assert_eq!(flag.stdout, env.stdout);
}

#[test]
fn audit_passes_on_small_instance() {
    let out = run(&["audit", "-N", "8", "-K", "2", "-X", "2", "-T", "2", "--draws", "2000", "--seed", "5"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).ends_with("overall: pass\n"));
}

fn write_config(dir: &std::path::Path, body: &str) -> String {
    let path = dir.join("cfg.json");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SESSION: &str = r#""session":{"params":{"N":8,"K":2,"X":2,"T":2,"M":3},"framework":"Lagrange","theta":2,
    "file_seed":1,"noise_seed":2,"model":{"kind":"fixed_set","servers":[3]}}"#;

#[test]
fn simulate_reports_session() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("t.jsonl");
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"schema_version":1,{SESSION},"output":{{"transcript":{:?}}}}}"#,
            transcript.to_str().unwrap()
        ),
    );
    let out = run(&["simulate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["committed_s"], 1);
    assert_eq!(report["consumed"], serde_json::json!([9, 9, 9, 0, 9, 9, 9, 9]));
    assert_eq!(report["rate"], serde_json::json!([2, 7]));
    assert_eq!(fs::read_to_string(transcript).unwrap().lines().count(), 63);
}

#[test]
fn simulate_exhaustion_is_a_check_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"schema_version":1,"session":{"params":{"N":8,"K":2,"X":2,"T":2,"M":1},"framework":"CSA","theta":0,
            "file_seed":1,"noise_seed":2,"model":{"kind":"fixed_set","servers":[0,1,2]}}}"#,
    );
    let out = run(&["simulate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["decode_ok"], false);
}

#[test]
fn malformed_configs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for body in [
        "not json".to_string(),
        format!(r#"{{"schema_version":2,{SESSION}}}"#),
        format!(r#"{{{SESSION}}}"#),
        format!(r#"{{"schema_version":1,{SESSION},"extra":true}}"#),
        r#"{"schema_version":1,"session":{"params":{"N":8,"K":2,"X":2,"T":2,"M":3},"framework":"Lagrange",
            "theta":7,"file_seed":1,"noise_seed":2,"model":{"kind":"none"}}}"#
            .to_string(),
    ] {
        let cfg = write_config(dir.path(), &body);
        let out = run(&["simulate", "--config", &cfg]);
        assert_eq!(out.status.code(), Some(2), "config {body}");
    }
    assert_eq!(run(&["simulate", "--config", "/nonexistent/cfg.json"]).status.code(), Some(2));
}

#[test]
fn pinned_seed_reruns_are_identical() {
    for args in [
        with_sys("rates", &["--trials", "4", "--seed", "3"]),
        with_sys("audit", &["--draws", "500", "--sample", "5", "--seed", "8"]),
        with_sys("certify", &["--trials", "1", "--seed", "12"]),
    ] {
        let a = run_owned(&args);
        let b = run_owned(&args);
        assert_eq!(a.stdout, b.stdout, "{args:?}");
        assert_eq!(a.status.code(), b.status.code());
    }
}
